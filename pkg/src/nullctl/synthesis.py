"""Control reconstruction, forward simulation and the terminal-state audit.

Given a dual datum ``phi`` the control is

    u(t) = ||B* e^{(T-t)A*} phi||^(p-2) B* e^{(T-t)A*} phi,

sampled at ``t_k = T - s_k`` where ``s_k`` are the nodes of the time rule J
uses at ``phi`` (:func:`nullctl.dual.time_rule`).
The forward integral ``int e^{(T-t)A} B u(t) dt`` uses the same nodes and
weights, so at a stationary point of J the simulated terminal state equals
``-h^beta ||phi||^(p-2) phi`` up to the gradient norm.  Both functions call
:func:`exp_action` node by node instead of the cached kernel of
:mod:`nullctl.dual`, so the identity also cross-checks that kernel.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dual import DualParameters, p_power_map, rule_for, time_rule
from .quadrature import Quadrature
from .errors import ValidationError
from .model import SemidiscreteSystem, as_state
from .optim import OptimizerConfig, OptimizerTrace, minimize
from .semigroup import Propagator, exp_action, make_propagator


@dataclass(frozen=True)
class ControlSignal:
    """Control samples on the (increasing) synthesis grid.

    ``weights`` are the quadrature weights attached to ``times``; ``rule`` is
    the dual time rule they come from (``times = T - rule.nodes``, reversed),
    kept so the forward solver can check the grid.
    """

    times: np.ndarray
    samples: np.ndarray
    weights: np.ndarray
    p: float
    q: float
    rule: Quadrature = field(repr=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        u = np.asarray(self.samples, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        if t.ndim != 1 or u.shape[0] != t.size or np.asarray(self.weights).shape != t.shape:
            raise ValidationError("control", "times, samples and weights must have matching length")
        # nodes graded toward an observation root may coincide once written as T - s
        if t.size > 1 and not np.all(np.diff(t) >= 0):
            raise ValidationError("control", "time grid must be increasing")
        if not np.all(np.isfinite(u)):
            k = int(np.flatnonzero(~np.all(np.isfinite(u), axis=1))[0])
            raise ValidationError("control", f"non-finite sample at t = {t[k]}")
        for name, arr in (("times", t), ("samples", u)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_u(self) -> int:
        return self.samples.shape[1]

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.samples, axis=1)

    def lebesgue_integral(self, r: float) -> float:
        """``int ||u(t)||^r dt`` by the synthesis rule."""
        return float(self.weights @ self.norms() ** r)

    def resample(self, grid: Sequence[float]) -> np.ndarray:
        """Piecewise-linear interpolation; constant beyond the end nodes."""
        grid = np.asarray(grid, dtype=float)
        return np.column_stack([np.interp(grid, self.times, self.samples[:, j])
                                for j in range(self.n_u)])

    def to_csv(self, path, grid: Optional[Sequence[float]] = None) -> None:
        times = self.times if grid is None else np.asarray(grid, dtype=float)
        values = self.samples if grid is None else self.resample(times)
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t"] + [f"u_{j + 1}" for j in range(self.n_u)])
            for t, row in zip(times, values):
                out.writerow([repr(float(t))] + [repr(float(v)) for v in row])


@dataclass(frozen=True)
class EstimateAudit:
    """Left-hand sides of the three a-priori estimates for one run.

    The estimates read, with ``Y = ||y0||``,

        int ||u||^p dt      <= M^(p/(p-1)) Y^(p/(p-1))
        h^beta ||phi||^p    <= M^(p/(p-1)) Y^(p/(p-1))
        ||y(T)||            <= M^(1/(p-1)) h^(beta/p) Y^(1/(p-1))

    and :attr:`m_required` is the smallest ``M`` satisfying all three.
    """

    control_p_integral: float
    penalty_term: float
    y_terminal_norm: float
    y0_norm: float
    h: float
    beta: float
    p: float

    def _scale(self) -> float:
        return 0.0 if math.isinf(self.beta) else self.h ** (self.beta / self.p)

    @property
    def m_required(self) -> float:
        p, y = self.p, self.y0_norm
        if y == 0.0:
            return 0.0
        if p == 1.0:
            return math.nan
        e = (p - 1.0) / p
        cands = [self.control_p_integral ** e / y, self.penalty_term ** e / y]
        scale = self._scale()
        if scale > 0:
            cands.append((self.y_terminal_norm / scale) ** (p - 1.0) / y)
        return max(cands)

    def bounds(self, m: float):
        """Right-hand sides ``(energy, penalty, terminal)`` for a given ``M``."""
        p, y = self.p, self.y0_norm
        energy = (m * y) ** (p / (p - 1.0))
        return energy, energy, (m * y) ** (1.0 / (p - 1.0)) * self._scale()

    def holds(self, m: float, rtol: float = 1e-12) -> bool:
        lhs = (self.control_p_integral, self.penalty_term, self.y_terminal_norm)
        return all(a <= b * (1 + rtol) for a, b in zip(lhs, self.bounds(m)))


def fit_m(audits: Sequence[EstimateAudit]):
    """Sweep constant ``M = max m_required`` and the spread max/min of the per-run values."""
    ms = np.array([a.m_required for a in audits], dtype=float)
    ms = ms[np.isfinite(ms) & (ms > 0)]
    if ms.size == 0:
        return 0.0, math.nan
    return float(ms.max()), float(ms.max() / ms.min())


@dataclass
class SynthesisResult:
    phi: np.ndarray
    control: ControlSignal
    y_terminal: np.ndarray
    lp_control_norm: float  # int ||u||^p
    lq_control_norm: float  # int ||u||^q
    terminal_residual: float
    estimate_audit: EstimateAudit
    converged: bool = True
    trace: Optional[OptimizerTrace] = field(default=None, repr=False)


def build_control(system: SemidiscreteSystem, prop: Propagator, params: DualParameters,
                  phi) -> ControlSignal:
    """Sample ``u(t_k) = p_power_map(B* e^{(T - t_k)A*} phi)``."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (system.n_x,):
        raise ValidationError("phi", f"expected length {system.n_x}, got {phi.shape}")
    quad = time_rule(system, prop, params, phi)
    # s_k = T - t_k increases with k, so reverse to get increasing t
    lags = quad.nodes[::-1]
    samples = np.empty((lags.size, system.n_u))
    for k, s in enumerate(lags):
        obs = system.b_adjoint(exp_action(prop, s, phi, adjoint=True))
        samples[k] = p_power_map(obs, params.p)
    return ControlSignal(system.horizon - lags, samples, quad.weights[::-1].copy(),
                         params.p, params.q, quad)


def simulate_forward(system: SemidiscreteSystem, prop: Propagator, y0,
                     control: ControlSignal) -> np.ndarray:
    """Terminal state ``e^{TA} y0 + int e^{(T-t)A} B u(t) dt`` on the control's own rule."""
    base = rule_for(prop, control.rule.panels, control.rule.order)
    expected = system.horizon - control.rule.nodes[::-1]
    if (not np.isin(base.breakpoints, control.rule.breakpoints).all()
            or control.times.shape != expected.shape
            or not np.allclose(control.times, expected, rtol=0, atol=1e-14 * system.horizon)):
        raise ValidationError("control", "time grid does not match the quadrature rule of the dual problem")
    if control.n_u != system.n_u:
        raise ValidationError("control", f"expected {system.n_u} input channels, got {control.n_u}")
    y = exp_action(prop, system.horizon, as_state(system, y0))
    forcing = system.b_matrix @ (control.weights[:, None] * control.samples).T  # (n_x, K)
    lags = control.rule.nodes[::-1]
    for k, s in enumerate(lags):
        if np.any(forcing[:, k]):
            y = y + exp_action(prop, s, forcing[:, k])
    return y


def audit_identities(system: SemidiscreteSystem, params: DualParameters, phi, control: ControlSignal,
                     y_terminal, y0, converged: bool = True,
                     trace: Optional[OptimizerTrace] = None) -> SynthesisResult:
    """Terminal residual ``||y(T) + h^beta p_power_map(phi)||`` and the estimate audit."""
    phi = np.asarray(phi, dtype=float)
    y_terminal = np.asarray(y_terminal, dtype=float)
    pen = params.penalty_scale(system.h)
    target = -pen * p_power_map(phi, params.p, system.weight)
    residual = system.norm(y_terminal - target)
    p, q = params.p, params.q
    lp = control.lebesgue_integral(p)
    lq = math.nan if math.isinf(q) else control.lebesgue_integral(q)
    audit = EstimateAudit(lp, pen * system.norm(phi) ** p, system.norm(y_terminal),
                          system.norm(as_state(system, y0)), system.h, params.beta, p)
    return SynthesisResult(phi, control, y_terminal, lp, lq, residual, audit, converged, trace)


def synthesize(system: SemidiscreteSystem, params: DualParameters, y0,
               config: Optional[OptimizerConfig] = None, prop: Optional[Propagator] = None,
               phi0=None) -> SynthesisResult:
    """Minimise J, build the control, simulate forward and audit."""
    prop = prop or make_propagator(system)
    phi, trace = minimize(system, prop, params, y0, config, phi0)
    control = build_control(system, prop, params, phi)
    y_t = simulate_forward(system, prop, y0, control)
    return audit_identities(system, params, phi, control, y_t, y0,
                            trace.reason == "grad_tol_met", trace)
