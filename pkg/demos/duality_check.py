"""Primal/dual identity on small systems, independent of the heat model.

The unpenalised dual J* is minimised with a kernel built from scipy's expm;
the control u = |B* e^{(T-t)A*} psi|^(p-2) B* e^{(T-t)A*} psi must then steer
y0 to zero and its L^q cost must equal -min J*.
"""

import math

import numpy as np

from nullctl import DualParameters
from nullctl.oracle import diagonal_system, duality_gap, random_stable_system

for label, system in (("diag(-1, -2)", diagonal_system()), ("random 5x5", random_stable_system())):
    y0 = np.ones(system.n_x)
    for p in (2.0, 1.5, 1.2):
        rep = duality_gap(system, DualParameters(p=p, beta=math.inf), y0)
        print(f"{label:13} p = {p:4.2f}  primal {rep.primal_value:.10f}  dual {rep.dual_value:.10f}"
              f"  gap {rep.gap:.1e}  |y(T)| {system.norm(rep.y_terminal):.1e}")
