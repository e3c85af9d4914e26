"""Penalized dual functional for L^q-minimal null controls.

For a terminal adjoint datum ``phi`` the functional is

    J(phi) = 1/p int_0^T |B* e^{tA*} phi|^p dt + 1/p h^beta ||phi||^p
             + <e^{TA*} phi, y0>

and its gradient (the Riesz representative in the state inner product) is

    G(phi) + h^beta ||phi||^(p-2) phi + e^{TA} y0,
    G(phi) = int_0^T e^{tA} B |B* e^{tA*} phi|^(p-2) B* e^{tA*} phi dt.

The time integrals use the graded composite Gauss-Legendre rule of
:mod:`nullctl.quadrature`; ``e^{t_k A} B`` is computed once per propagator and
rule and reused, so each evaluation costs ``O(K n_x n_u)`` for ``K`` nodes.
For p < 2 with a scalar control the rule is additionally refined at the sign
changes of the observation, where the integrand is not smooth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.optimize

from .errors import ValidationError
from .model import SemidiscreteSystem, as_state
from .quadrature import (DEFAULT_ORDER, DEFAULT_PANELS, Quadrature, composite_gauss_legendre,
                         refine_at_roots, stiffness_of)
from .semigroup import Propagator, exp_action


@dataclass(frozen=True)
class DualParameters:
    """Exponents, penalty and quadrature resolution of the dual functional.

    ``beta = inf`` removes the penalty term (``h**inf == 0`` for ``h < 1``).
    ``gamma``, ``s`` and ``theta`` only feed :attr:`admissible`.
    """

    p: float = 1.2
    q: Optional[float] = None
    beta: float = 2.0
    quad_nodes: int = DEFAULT_PANELS
    gamma: float = 0.75
    s: float = 2.0
    theta: float = 0.32
    order: int = DEFAULT_ORDER

    def __post_init__(self):
        p = float(self.p)
        if not (1.0 <= p <= 2.0):
            raise ValidationError("p", f"must lie in [1, 2], got {self.p}")
        q = math.inf if p == 1.0 else p / (p - 1.0)
        if self.q is not None:
            given = float(self.q)
            if not given >= 2.0 or abs(1.0 / p + 1.0 / given - 1.0) > 1e-12:
                raise ValidationError("q", f"must be conjugate to p = {p}, got {self.q}")
            q = given
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        if math.isnan(self.beta) or self.beta < 0:
            raise ValidationError("beta", f"must be nonnegative, got {self.beta}")
        if isinstance(self.quad_nodes, bool) or int(self.quad_nodes) != self.quad_nodes \
                or self.quad_nodes < 1:
            raise ValidationError("quad_nodes", f"need a positive integer, got {self.quad_nodes}")
        object.__setattr__(self, "quad_nodes", int(self.quad_nodes))
        if not 0.0 <= self.gamma < 1.0:
            raise ValidationError("gamma", f"must lie in [0, 1), got {self.gamma}")
        if not self.s > 0:
            raise ValidationError("s", f"must be positive, got {self.s}")
        if not 0.0 < self.theta < 1.0:
            raise ValidationError("theta", f"must lie in (0, 1), got {self.theta}")

    @property
    def admissible(self) -> bool:
        """Whether (p, gamma, theta, beta) fall in the window covered by the theory."""
        g, th = self.gamma, self.theta
        return (0.5 <= g < 1.0 / self.p
                and th + (1.0 - th) * g < 1.0 / self.p
                and 0.0 <= self.beta <= self.s * (1.0 - g) * th)

    def penalty_scale(self, h: float) -> float:
        return 0.0 if math.isinf(self.beta) else h ** self.beta

    def doubled(self) -> "DualParameters":
        from dataclasses import replace
        return replace(self, quad_nodes=2 * self.quad_nodes)


@dataclass(frozen=True)
class DualState:
    phi: np.ndarray
    j_value: float
    grad: np.ndarray
    nodes: np.ndarray = field(repr=False)


def p_power_map(v, p: float, weight: float = 1.0) -> np.ndarray:
    """``||v||^(p-2) v``, extended by zero at the origin.

    ``weight`` scales the inner product defining ``||.||``.
    """
    if not p >= 1.0:
        raise ValidationError("p", f"must be at least 1, got {p}")
    v = np.asarray(v, dtype=float)
    if p == 2.0:
        return v.copy()
    nrm = math.sqrt(weight) * float(np.linalg.norm(v))
    if nrm == 0.0:
        return np.zeros_like(v)
    return nrm ** (p - 2.0) * v


def _row_power(obs: np.ndarray, p: float):
    """Row-wise p-power map and the row norms."""
    norms = np.linalg.norm(obs, axis=1)
    if p == 2.0:
        return obs, norms
    factor = np.zeros_like(norms)
    nz = norms > 0
    factor[nz] = norms[nz] ** (p - 2.0)
    return obs * factor[:, None], norms


def quadrature_for(prop: Propagator, params: DualParameters) -> Quadrature:
    return rule_for(prop, params.quad_nodes, params.order)


def rule_for(prop: Propagator, panels: int, order: int = DEFAULT_ORDER) -> Quadrature:
    """The (cached) time rule used for ``prop``'s system with this resolution."""
    key = ("quad", panels, order)
    if key not in prop.cache:
        sys_ = prop.system
        prop.cache[key] = composite_gauss_legendre(
            sys_.horizon, panels, order, stiffness_of(sys_.a_matrix))
    return prop.cache[key]


def input_kernel(prop: Propagator, quad: Quadrature) -> np.ndarray:
    """``e^{t_k A} B`` for every node, shape ``(K, n_x, n_u)`` (cached for base rules)."""
    key = ("kernel", quad.panels, quad.order)
    if not quad.roots and key in prop.cache:
        return prop.cache[key]
    kernel = kernel_at(prop, quad.nodes)
    kernel.setflags(write=False)
    if not quad.roots:
        prop.cache[key] = kernel
    return kernel


def kernel_at(prop: Propagator, times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    b = prop.system.b_matrix
    if prop.kind == "spectral":
        lam, q = prop.eigenvalues, prop.eigenvectors
        modal = np.exp(np.outer(times, lam))[:, :, None] * (q.T @ b)[None]
        return np.einsum("ij,kjl->kil", q, modal)
    if times.size == 0:
        return np.zeros((0,) + b.shape)
    return np.stack([exp_action(prop, t, b) for t in times])


class DualObjective:
    """J and its gradient for fixed system, parameters and initial state.

    The kernel ``e^{t_k A} B`` on the base rule is computed once and reused.
    For p < 2 and a scalar control the rule is refined at the sign changes of
    the observation of each ``phi`` (see :func:`rule`); the refined panels are
    graded toward the roots, where the integrand vanishes, so moving them with
    ``phi`` leaves the gradient formula exact up to quadrature error.
    """

    def __init__(self, system: SemidiscreteSystem, prop: Propagator,
                 params: DualParameters, y0=None, resolve_roots: Optional[bool] = None):
        if prop.system is not system and prop.system != system:
            raise ValidationError("prop", "propagator was built for a different system")
        self.system = system
        self.prop = prop
        self.params = params
        self.quad = quadrature_for(prop, params)
        self.kernel = input_kernel(prop, self.quad)
        self.penalty = params.penalty_scale(system.h)
        if resolve_roots is None:
            resolve_roots = params.p < 2.0 and system.n_u == 1
        self.resolve_roots = bool(resolve_roots)
        self._rules: dict = {}
        if y0 is None:
            self.free_terminal = np.zeros(system.n_x)
        else:
            self.free_terminal = exp_action(prop, system.horizon, as_state(system, y0))

    def _check_phi(self, phi):
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.system.n_x,):
            raise ValidationError("phi", f"expected length {self.system.n_x}, got {phi.shape}")
        return phi

    def _observe_scalar(self, t, phi) -> float:
        out = self.system.b_adjoint(exp_action(self.prop, t, phi, adjoint=True))
        return float(out[0])

    def sign_changes(self, phi) -> np.ndarray:
        """Roots of the scalar observation bracketed by consecutive base nodes."""
        phi = self._check_phi(phi)
        obs = self.observations(phi)[:, 0]
        t = self.quad.nodes
        roots = []
        for i in np.flatnonzero(np.sign(obs[:-1]) * np.sign(obs[1:]) < 0):
            a, b = self._observe_scalar(t[i], phi), self._observe_scalar(t[i + 1], phi)
            if a * b >= 0:  # sign only flips at round-off level
                continue
            roots.append(scipy.optimize.brentq(self._observe_scalar, t[i], t[i + 1], args=(phi,),
                                               xtol=1e-15 * self.system.horizon, rtol=1e-15))
        return np.array(roots)

    def rule(self, *phis):
        """``(quadrature, kernel)`` used for these dual data (refined at the union of their roots)."""
        if not self.resolve_roots:
            return self.quad, self.kernel
        key = tuple(self._check_phi(ph).tobytes() for ph in phis)
        if key in self._rules:
            return self._rules[key]
        roots = np.concatenate([self.sign_changes(ph) for ph in phis] + [np.empty(0)])
        quad = refine_at_roots(self.quad, roots)
        if quad is self.quad:
            out = (self.quad, self.kernel)
        else:
            out = (quad, self._kernel_for(quad))
        if len(self._rules) >= 8:
            self._rules.pop(next(iter(self._rules)))
        self._rules[key] = out
        return out

    def _kernel_for(self, quad: Quadrature) -> np.ndarray:
        # reuse base samples for untouched panels (nodes shared exactly)
        pos = np.searchsorted(self.quad.nodes, quad.nodes)
        pos = np.minimum(pos, self.quad.nodes.size - 1)
        shared = self.quad.nodes[pos] == quad.nodes
        kernel = np.empty((quad.nodes.size,) + self.kernel.shape[1:])
        kernel[shared] = self.kernel[pos[shared]]
        kernel[~shared] = kernel_at(self.prop, quad.nodes[~shared])
        return kernel

    def observations(self, phi, kernel=None) -> np.ndarray:
        """``B* e^{t_k A*} phi`` at every node (base rule unless ``kernel`` given), shape ``(K, n_u)``."""
        phi = self._check_phi(phi)
        kernel = self.kernel if kernel is None else kernel
        obs = self.system.weight * np.einsum("kil,i->kl", kernel, phi)
        finite = np.all(np.isfinite(obs), axis=1)
        if not finite.all():
            k = int(np.flatnonzero(~finite)[0])
            raise ValidationError("phi", f"non-finite observation at quadrature node {k}")
        return obs

    def observation_integral(self, phi) -> float:
        """``int |B* e^{tA*} phi|^p dt``."""
        quad, kernel = self.rule(phi)
        norms = np.linalg.norm(self.observations(phi, kernel), axis=1)
        return float(quad.weights @ norms ** self.params.p)

    def gramian_apply(self, phi) -> np.ndarray:
        quad, kernel = self.rule(phi)
        powered, _ = _row_power(self.observations(phi, kernel), self.params.p)
        return np.einsum("kil,kl->i", kernel, quad.weights[:, None] * powered)

    def value(self, phi) -> float:
        return self.value_and_grad(phi)[0]

    def value_and_grad(self, phi):
        phi = self._check_phi(phi)
        p, sys_ = self.params.p, self.system
        quad, kernel = self.rule(phi)
        obs = self.observations(phi, kernel)
        powered, norms = _row_power(obs, p)
        w = quad.weights
        grad = np.einsum("kil,kl->i", kernel, w[:, None] * powered)
        value = float(w @ norms ** p) / p
        if self.penalty:
            value += self.penalty * sys_.norm(phi) ** p / p
            grad = grad + self.penalty * p_power_map(phi, p, sys_.weight)
        value += sys_.inner(phi, self.free_terminal)
        return value, grad + self.free_terminal

    def gradient(self, phi) -> np.ndarray:
        return self.value_and_grad(phi)[1]

    def difference(self, new, old) -> float:
        """``J(new) - J(old)`` without cancelling two large values.

        Both points are integrated on one rule (refined at the roots of both).
        """
        new, old = self._check_phi(new), self._check_phi(old)
        p, sys_ = self.params.p, self.system
        quad, kernel = self.rule(new, old)
        obs_new, obs_old = self.observations(new, kernel), self.observations(old, kernel)
        a = np.linalg.norm(obs_new, axis=1)
        b = np.linalg.norm(obs_old, axis=1)
        # |a|^2 - |b|^2 = (x - y).(x + y) keeps the leading digits
        sq = np.einsum("kl,kl->k", obs_new - obs_old, obs_new + obs_old)
        total = float(quad.weights @ _power_difference(a, b, sq, p)) / p
        if self.penalty:
            an, bn = sys_.norm(new), sys_.norm(old)
            sqn = sys_.inner(new - old, new + old)
            total += self.penalty * float(_power_difference(
                np.array([an]), np.array([bn]), np.array([sqn]), p)[0]) / p
        return total + sys_.inner(new - old, self.free_terminal)

    def ray_step(self, direction) -> Optional[float]:
        """Exact minimiser ``s`` of ``J(s d)`` over ``s >= 0`` (p > 1).

        ``J(s d) = s^p N(d)/p + s <d, e^{TA} y0>`` by homogeneity, so the
        optimal step from the origin is available in closed form.
        """
        d = self._check_phi(direction)
        lin = self.system.inner(d, self.free_terminal)
        p = self.params.p
        n_d = self.observation_integral(d)
        if self.penalty:
            n_d += self.penalty * self.system.norm(d) ** p
        if p == 1.0 or lin >= 0 or n_d <= 0:
            return None
        return (-lin / n_d) ** (1.0 / (p - 1.0))


def _power_difference(a, b, sq, p):
    """``a^p - b^p`` for nonnegative ``a, b`` given ``sq = a^2 - b^2``."""
    out = np.zeros_like(a)
    both = (a > 0) & (b > 0)
    # a - b = (a^2 - b^2)/(a + b); then a^p - b^p = b^p expm1(p log1p((a-b)/b))
    rel = np.zeros_like(a)
    rel[both] = sq[both] / (a[both] + b[both]) / b[both]
    close = both & (np.abs(rel) < 0.5)
    out[close] = b[close] ** p * np.expm1(p * np.log1p(rel[close]))
    far = both & ~close  # no cancellation to protect against
    out[far] = a[far] ** p - b[far] ** p
    only_a = (a > 0) & ~(b > 0)
    out[only_a] = a[only_a] ** p
    only_b = ~(a > 0) & (b > 0)
    out[only_b] = -b[only_b] ** p
    return out


def evaluate_j(system, prop, params, y0, phi) -> float:
    return DualObjective(system, prop, params, y0).value(phi)


def gramian_apply(system, prop, params, phi) -> np.ndarray:
    """Apply the phi-weighted Gramian; linear in phi only when p = 2."""
    return DualObjective(system, prop, params).gramian_apply(phi)


def gradient_j(system, prop, params, y0, phi) -> np.ndarray:
    """Gradient of J with respect to the state inner product.

    Directional derivatives are ``system.inner(gradient_j(...), d)``.
    """
    return DualObjective(system, prop, params, y0).gradient(phi)


def dual_state(system, prop, params, y0, phi) -> DualState:
    obj = DualObjective(system, prop, params, y0)
    value, grad = obj.value_and_grad(phi)
    return DualState(np.array(phi, dtype=float), value, grad, obj.rule(phi)[0].nodes)


def time_rule(system, prop, params, phi) -> Quadrature:
    """The rule J uses at ``phi`` (base rule, refined at observation roots when p < 2)."""
    return DualObjective(system, prop, params).rule(phi)[0]
