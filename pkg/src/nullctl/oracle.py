"""Reference computations that avoid the production propagator.

Everything here gets ``e^{tA}`` from :func:`scipy.linalg.expm`, node by node,
on the same time rule as the dual module.  Two engines are provided:

* the p = 2 linear solve ``(G + h^beta I) phi = -e^{TA} y0`` with a dense
  factorisation, used to check the optimizer;
* the unpenalised duality check: minimise J*, build the control from the
  minimiser, simulate it forward, and compare primal and dual values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .dual import DualParameters, _power_difference, _row_power, p_power_map
from .errors import NotControllableError, ValidationError
from .model import SemidiscreteSystem, as_state, from_matrices
from .optim import OptimizerConfig, descend
from .quadrature import Quadrature, composite_gauss_legendre, stiffness_of

GRAMIAN_COND_MAX = 1e12
ORACLE_GRAD_TOL = 1e-10
STEERING_RTOL = 1e-6


def oracle_rule(system: SemidiscreteSystem, params: DualParameters) -> Quadrature:
    return composite_gauss_legendre(system.horizon, params.quad_nodes, params.order,
                                    stiffness_of(system.a_matrix))


def expm_kernel(system: SemidiscreteSystem, quad: Quadrature) -> np.ndarray:
    """``expm(t_k A) B`` for every node, shape ``(K, n_x, n_u)``."""
    a, b = system.a_matrix, system.b_matrix
    return np.stack([scipy.linalg.expm(t * a) @ b for t in quad.nodes])


def p2_gramian(system: SemidiscreteSystem, params: DualParameters,
               kernel: Optional[np.ndarray] = None) -> np.ndarray:
    """Matrix of ``phi -> int e^{tA} B B* e^{tA*} phi dt`` in nodal coordinates."""
    quad = oracle_rule(system, params)
    if kernel is None:
        kernel = expm_kernel(system, quad)
    gc = np.einsum("k,kil,kjl->ij", quad.weights, kernel, kernel)
    return system.weight * gc


def p2_gramian_solve(system: SemidiscreteSystem, params: DualParameters, y0) -> np.ndarray:
    """Solve ``(G + h^beta I) phi = -e^{TA} y0`` by a dense Cholesky factorisation."""
    if params.p != 2.0:
        raise ValidationError("p", f"the linear oracle needs p = 2, got {params.p}")
    y0 = as_state(system, y0)
    mat = p2_gramian(system, params) + params.penalty_scale(system.h) * np.eye(system.n_x)
    rhs = -scipy.linalg.expm(system.horizon * system.a_matrix) @ y0
    if not np.any(rhs):
        return np.zeros(system.n_x)
    cond = np.linalg.cond(mat)
    if not cond < GRAMIAN_COND_MAX:
        raise NotControllableError(f"Gramian system is singular (condition number {cond:.3g})")
    return scipy.linalg.cho_solve(scipy.linalg.cho_factor(mat), rhs)


class ExpmObjective:
    """J (or J* when ``penalised=False``) evaluated with the expm kernel."""

    def __init__(self, system: SemidiscreteSystem, params: DualParameters, y0,
                 penalised: bool = False):
        self.system = system
        self.params = params
        self.quad = oracle_rule(system, params)
        self.kernel = expm_kernel(system, self.quad)
        self.penalty = params.penalty_scale(system.h) if penalised else 0.0
        self.free_terminal = scipy.linalg.expm(system.horizon * system.a_matrix) @ as_state(system, y0)

    def observations(self, psi) -> np.ndarray:
        return self.system.weight * np.einsum("kil,i->kl", self.kernel, psi)

    def value_and_grad(self, psi):
        psi = np.asarray(psi, dtype=float)
        p, sys_ = self.params.p, self.system
        powered, norms = _row_power(self.observations(psi), p)
        w = self.quad.weights
        value = float(w @ norms ** p) / p + sys_.inner(psi, self.free_terminal)
        grad = np.einsum("kil,kl->i", self.kernel, w[:, None] * powered) + self.free_terminal
        if self.penalty:
            value += self.penalty * sys_.norm(psi) ** p / p
            grad = grad + self.penalty * p_power_map(psi, p, sys_.weight)
        return value, grad

    def value(self, psi) -> float:
        return self.value_and_grad(psi)[0]

    def difference(self, new, old) -> float:
        o_new, o_old = self.observations(new), self.observations(old)
        sq = np.einsum("kl,kl->k", o_new - o_old, o_new + o_old)
        d = _power_difference(np.linalg.norm(o_new, axis=1), np.linalg.norm(o_old, axis=1),
                              sq, self.params.p)
        total = float(self.quad.weights @ d) / self.params.p
        if self.penalty:
            # small systems only; direct subtraction is accurate enough here
            p, sys_ = self.params.p, self.system
            total += self.penalty * (sys_.norm(new) ** p - sys_.norm(old) ** p) / p
        return total + self.system.inner(np.asarray(new) - old, self.free_terminal)

    def ray_step(self, d) -> Optional[float]:
        p = self.params.p
        lin = self.system.inner(d, self.free_terminal)
        n_d = float(self.quad.weights @ np.linalg.norm(self.observations(d), axis=1) ** p)
        if self.penalty:
            n_d += self.penalty * self.system.norm(d) ** p
        if p == 1.0 or lin >= 0 or n_d <= 0:
            return None
        return (-lin / n_d) ** (1.0 / (p - 1.0))


def _check_controllable(system, params, kernel):
    gram = p2_gramian(system, params, kernel)
    cond = np.linalg.cond(gram)
    if not cond < GRAMIAN_COND_MAX:
        raise NotControllableError(
            f"p = 2 Gramian has condition number {cond:.3g}; not null controllable at tolerance")


def dual_value(system: SemidiscreteSystem, params: DualParameters, y0,
               grad_tol: float = ORACLE_GRAD_TOL, max_iters: int = 100_000):
    """Minimise the unpenalised J*; returns ``(value, psi_star)``."""
    if system.n_x > 50:
        raise ValidationError("system", f"oracle is meant for n_x <= 50, got {system.n_x}")
    obj = ExpmObjective(system, params, y0)
    _check_controllable(system, params, obj.kernel)
    psi, trace = descend(obj, np.zeros(system.n_x),
                         OptimizerConfig(grad_tol=grad_tol, max_iters=max_iters))
    if trace.reason != "grad_tol_met":
        raise ValidationError("grad_tol", f"oracle minimisation stopped with {trace.reason} "
                              f"at |grad| = {trace.final.grad_norm:.3g}")
    return obj.value(psi), psi


@dataclass
class DualityReport:
    primal_value: float
    dual_value: float
    gap: float
    times: np.ndarray
    control: np.ndarray
    young_equality_residual: float
    y_terminal: np.ndarray
    steering_ok: bool
    psi: np.ndarray


def duality_gap(system: SemidiscreteSystem, params: DualParameters, y0,
                grad_tol: float = ORACLE_GRAD_TOL) -> DualityReport:
    """Primal value of the control built from the J* minimiser, and the gap to -J*."""
    value, psi = dual_value(system, params, y0, grad_tol)
    obj = ExpmObjective(system, params, y0)
    obs = obj.observations(psi)
    controls = np.array([p_power_map(o, params.p) for o in obs])
    w = obj.quad.weights
    u_norm = np.linalg.norm(controls, axis=1)
    o_norm = np.linalg.norm(obs, axis=1)
    q = params.q
    if math.isinf(q):
        primal = 0.0 if not np.any(u_norm) else math.nan
        young = 0.0
    else:
        primal = float(w @ u_norm ** q) / q
        young = float(np.max(np.abs(u_norm ** q - o_norm ** params.p), initial=0.0))
    # mild solution y(T) = e^{TA} y0 + int e^{(T-t)A} B u(t) dt, with s = T - t
    y_t = obj.free_terminal + np.einsum("kil,kl->i", obj.kernel, w[:, None] * controls)
    y0n = system.norm(as_state(system, y0))
    steering = system.norm(y_t) <= STEERING_RTOL * y0n
    order = np.argsort(system.horizon - obj.quad.nodes)
    return DualityReport(primal, value, primal + value, (system.horizon - obj.quad.nodes)[order],
                         controls[order], young, y_t, bool(steering), psi)


def diagonal_system(horizon: float = 1.0) -> SemidiscreteSystem:
    """``A = diag(-1, -2)``, ``B = I``."""
    return from_matrices(np.diag([-1.0, -2.0]), np.eye(2), horizon)


def random_stable_system(n: int = 5, seed: int = 42, horizon: float = 1.0) -> SemidiscreteSystem:
    """Non-symmetric Gaussian matrix shifted so every eigenvalue has real part <= -1; ``B = I``."""
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((n, n))
    shift = np.max(np.linalg.eigvals(m).real) + 1.0
    return from_matrices(m - shift * np.eye(n), np.eye(n), horizon)
