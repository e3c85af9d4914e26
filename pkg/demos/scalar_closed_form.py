"""Walk through the whole pipeline on y' = -y + u, where everything is explicit.

For A = -1, B = 1, T = 1 and no penalty, the dual functional is

    J(phi) = |phi|^p (1 - e^{-p}) / p^2 + phi e^{-1} y0

so its minimiser, the control u(t) = |phi e^{t-1}|^(p-2) phi e^{t-1} and the
terminal state can all be written down and compared with the numerics.
"""

import math

import numpy as np

from nullctl import DualParameters, OptimizerConfig, from_matrices, make_propagator
from nullctl.synthesis import synthesize

system = from_matrices([[-1.0]], [[1.0]], horizon=1.0)
prop = make_propagator(system)
y0 = [1.0]

print(f"{'p':>5} {'phi (numeric)':>18} {'phi (exact)':>18} {'|y(T)|':>10}")
for p in (2.0, 1.5, 1.2):
    res = synthesize(system, DualParameters(p=p, beta=math.inf), y0,
                     OptimizerConfig(grad_tol=1e-12), prop)
    exact = -(math.exp(-1) * p / (1 - math.exp(-p))) ** (1 / (p - 1))
    print(f"{p:5.2f} {res.phi[0]:18.12f} {exact:18.12f} {abs(res.y_terminal[0]):10.2e}")

# the control is a pure exponential in time for p = 2
res = synthesize(system, DualParameters(p=2.0, beta=math.inf), y0, OptimizerConfig(grad_tol=1e-12), prop)
u = res.control
print("max |u(t) - phi e^{t-1}| =",
      np.max(np.abs(u.samples[:, 0] - res.phi[0] * np.exp(u.times - 1.0))))
