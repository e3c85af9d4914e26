"""Gradient methods for the dual functional.

``paper-gradient`` is the fixed-step iteration ``phi <- phi - step * grad``
stopped at ``||grad|| <= grad_tol``.  ``adaptive-gradient`` is a descent
method with an Armijo backtracking search, so the J sequence is nonincreasing.
Its direction comes from the last ``memory`` secant pairs ``(s, y)`` (the
limited-memory BFGS two-loop recursion in the state inner product); with
``memory = 0`` it is steepest descent with two-point (Barzilai-Borwein) steps.
Pure steepest descent needs ~10^5 steps for p = 6/5, beta = 2 at n = 100,
where the observation crosses zero and |o|^(p-2) makes J badly conditioned.

From ``phi = 0`` the first step is the exact minimiser along ``-grad``, which
matters for p near 1: the minimiser has norm ~ |e^{TA} y0|^(1/(p-1)).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .dual import DualObjective
from .errors import ValidationError

METHODS = ("paper-gradient", "adaptive-gradient")
ARMIJO_C = 1e-4
DIVERGENCE_RUN = 10
MIN_STEP = 1e-300
CURVATURE_TOL = 1e-12


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "adaptive-gradient"
    step: float = 1.0
    grad_tol: float = 1e-8
    max_iters: int = 200_000
    trace_every: int = 1
    memory: int = 20

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError("method", f"expected one of {METHODS}, got {self.method!r}")
        if not self.step > 0:
            raise ValidationError("step", f"must be positive, got {self.step}")
        if not self.grad_tol > 0:
            raise ValidationError("grad_tol", f"must be positive, got {self.grad_tol}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValidationError("max_iters", f"need a positive integer, got {self.max_iters}")
        if int(self.trace_every) != self.trace_every or self.trace_every < 1:
            raise ValidationError("trace_every", f"need a positive integer, got {self.trace_every}")
        if int(self.memory) != self.memory or self.memory < 0:
            raise ValidationError("memory", f"need a nonnegative integer, got {self.memory}")

    @classmethod
    def paper(cls, max_iters: int = 1000, trace_every: int = 1) -> "OptimizerConfig":
        """Fixed step 0.01 and stopping tolerance 1e-2."""
        return cls("paper-gradient", 0.01, 1e-2, max_iters, trace_every)


@dataclass
class TraceRow:
    iter: int
    j_value: float
    grad_norm: float
    phi_norm: float


@dataclass
class OptimizerTrace:
    rows: List[TraceRow] = field(default_factory=list)
    reason: str = "max_iters"
    iterations: int = 0
    evaluations: int = 0
    diverged: bool = False

    @property
    def final(self) -> TraceRow:
        return self.rows[-1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["iter", "j_value", "grad_norm", "phi_norm"])
            for r in self.rows:
                out.writerow([r.iter, repr(r.j_value), repr(r.grad_norm), repr(r.phi_norm)])


def minimize(system, prop, params, y0, config: Optional[OptimizerConfig] = None,
             phi0=None):
    """Minimise J over phi; returns ``(phi_star, trace)``."""
    config = config or OptimizerConfig()
    objective = DualObjective(system, prop, params, y0)
    if phi0 is None:
        phi0 = np.zeros(system.n_x)
    return descend(objective, phi0, config)


def descend(objective, phi0, config: OptimizerConfig):
    """Run ``config.method`` on any object exposing the DualObjective interface.

    Needs ``value_and_grad`` and ``system`` (for the inner product);
    ``difference`` and ``ray_step`` are used when present.
    """
    phi = np.array(phi0, dtype=float)
    if phi.shape != (objective.system.n_x,):
        raise ValidationError("phi0", f"expected length {objective.system.n_x}, got {phi.shape}")
    if config.method == "paper-gradient":
        return _fixed_step(objective, phi, config)
    return _adaptive(objective, phi, config)


def _recorder(trace, config, norm):
    def record(it, j, gn, phi, force=False):
        if force or it % config.trace_every == 0:
            if trace.rows and trace.rows[-1].iter == it:
                return
            trace.rows.append(TraceRow(it, float(j), float(gn), norm(phi)))
    return record


def _fixed_step(objective, phi, config):
    system = objective.system
    trace = OptimizerTrace()
    record = _recorder(trace, config, system.norm)
    j, g = objective.value_and_grad(phi)
    trace.evaluations = 1
    gn = system.norm(g)
    best = (j, phi)
    rising = 0
    record(0, j, gn, phi, force=True)
    it = 0
    while True:
        if gn <= config.grad_tol:
            trace.reason = "grad_tol_met"
            best = (j, phi)
            break
        if it >= config.max_iters:
            trace.reason = "max_iters"
            break
        it += 1
        phi = phi - config.step * g
        j_prev = j
        try:
            j, g = objective.value_and_grad(phi)
        except ValidationError:
            trace.reason = "step_failure"
            break
        trace.evaluations += 1
        gn = system.norm(g)
        if not (math.isfinite(j) and math.isfinite(gn)):
            trace.reason = "step_failure"
            break
        rising = rising + 1 if j > j_prev else 0
        if rising >= DIVERGENCE_RUN:
            trace.diverged = True
        if j < best[0]:
            best = (j, phi)
        record(it, j, gn, phi)
    trace.iterations = it
    if trace.rows[-1].iter != it and math.isfinite(j):
        record(it, j, gn, phi, force=True)
    return np.array(best[1]), trace


def _secant_direction(g, memory, inner):
    """Two-loop recursion: ``-H g`` for the limited-memory secant inverse metric.

    ``memory`` holds ``(s, y, 1/<s, y>)`` pairs, oldest first; the initial
    metric is the two-point scaling ``<s, y>/<y, y>`` of the newest pair.
    """
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(memory):
        a = rho * inner(s, q)
        alphas.append(a)
        q = q - a * y
    s, y, _ = memory[-1]
    q = q * (inner(s, y) / inner(y, y))
    for (s, y, rho), a in zip(memory, reversed(alphas)):
        q = q + (a - rho * inner(y, q)) * s
    return -q


def _adaptive(objective, phi, config):
    system = objective.system
    inner = system.inner
    trace = OptimizerTrace()
    record = _recorder(trace, config, system.norm)
    diff = getattr(objective, "difference", None)
    j, g = objective.value_and_grad(phi)
    trace.evaluations = 1
    gn = system.norm(g)
    record(0, j, gn, phi, force=True)

    step = config.step
    ray = getattr(objective, "ray_step", None)
    if ray is not None and not np.any(phi) and gn > 0:
        s = ray(-g)
        if s is not None and s > 0:
            step = s

    pairs = []
    it = 0
    while True:
        if gn <= config.grad_tol:
            trace.reason = "grad_tol_met"
            break
        if it >= config.max_iters:
            trace.reason = "max_iters"
            break
        it += 1
        direction = _secant_direction(g, pairs, inner) if pairs else -g
        slope = inner(direction, g)
        if slope >= 0:
            # stale curvature pairs; restart from steepest descent
            pairs.clear()
            direction, slope = -g, -gn * gn
        t = 1.0 if pairs else step
        while True:
            trial = phi + t * direction
            if np.array_equal(trial, phi) or t < MIN_STEP:
                trace.reason = "step_failure"
                trace.iterations = it - 1
                record(it - 1, j, gn, phi, force=True)
                return phi, trace
            try:
                j_trial, g_trial = objective.value_and_grad(trial)
            except ValidationError:
                j_trial = math.inf
            trace.evaluations += 1
            if math.isfinite(j_trial):
                decrease = diff(trial, phi) if diff is not None else j_trial - j
                if decrease <= ARMIJO_C * t * slope:
                    break
            t *= 0.5
        s_vec = trial - phi
        y_vec = g_trial - g
        phi, j, g = trial, j_trial, g_trial
        gn = system.norm(g)
        record(it, j, gn, phi)
        sy = inner(s_vec, y_vec)
        ss = inner(s_vec, s_vec)
        step = ss / sy if sy > 0 else 2.0 * t
        if config.memory and sy > CURVATURE_TOL * math.sqrt(ss * inner(y_vec, y_vec)):
            pairs.append((s_vec, y_vec, 1.0 / sy))
            del pairs[:-config.memory]
    trace.iterations = it
    record(it, j, gn, phi, force=True)
    return phi, trace
