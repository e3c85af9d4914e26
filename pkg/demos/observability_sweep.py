"""Observability constants across mesh refinement.

For each mesh we estimate the smallest C with

    |e^{TA*} psi|^p <= C ( int |B* e^{tA*} psi|^p dt + h^beta |psi|^p )

and the upper constant C' of the reverse bound.  Both should stay in a band
as h -> 0 when the observation is uniformly observable.
"""

from nullctl import DualParameters
from nullctl.analysis import sweep_rows, uniformity_sweep

records = uniformity_sweep([10, 20, 40, 80], DualParameters(p=1.2, beta=0.16), seed=42, jobs=2)
header, rows = sweep_rows(records)
print(" ".join(f"{h:>14}" for h in header[:7]))
for row in rows:
    print(" ".join(f"{v:>14.6g}" if isinstance(v, float) else f"{v:>14}" for v in row[:7]))
lower = [r.constant_estimate for r in records]
print(f"band of C: {max(lower) / min(lower):.3f}")
