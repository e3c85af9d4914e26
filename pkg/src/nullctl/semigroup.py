"""Matrix-exponential actions e^{tA} v and e^{tA*} v for many t.

Symmetric generators are diagonalised once; every action is then two dense
products.  Other generators use the classical fourth-order Runge-Kutta map,
whose step matrix for a linear system is the Taylor polynomial
``R(dt A) = I + dt A + ... + (dt A)^4 / 24``.  Its powers ``R^(2^j)`` are cached,
so advancing ``m`` steps costs ``O(log m)`` matrix-vector products.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ValidationError
from .model import SemidiscreteSystem

DEFAULT_STEPS_PER_UNIT = 2048
LOCAL_TRUNCATION_TOL = 1e-10
RECONSTRUCTION_RTOL = 1e-9
ORTHONORMALITY_TOL = 1e-10


def _rk4_matrix(z: np.ndarray) -> np.ndarray:
    n = z.shape[0]
    eye = np.eye(n)
    return eye + z @ (eye + z @ (eye / 2 + z @ (eye / 6 + z / 24)))


def _rk4_apply(a: np.ndarray, dt: float, v: np.ndarray) -> np.ndarray:
    # Horner form of the same polynomial, applied to vectors
    w = v + dt / 4 * (a @ v)
    w = v + dt / 3 * (a @ w)
    w = v + dt / 2 * (a @ w)
    return v + dt * (a @ w)


def _truncation_estimate(a: np.ndarray, dt: float) -> float:
    """Leading Taylor remainder ``||(dt A)^5 1|| / 120`` relative to ``||1||``."""
    ones = np.ones(a.shape[0])
    v = ones
    for _ in range(5):
        v = dt * (a @ v)
    return float(np.linalg.norm(v) / 120.0 / np.linalg.norm(ones))


@dataclass(frozen=True)
class Propagator:
    """Precomputed representation of ``t -> e^{tA}`` for one system."""

    system: SemidiscreteSystem
    kind: str
    eigenvalues: Optional[np.ndarray] = None
    eigenvectors: Optional[np.ndarray] = None
    steps: Optional[int] = None
    dt: Optional[float] = None
    powers: tuple = field(default=(), repr=False)
    fallback_warning: bool = False
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def horizon(self) -> float:
        return self.system.horizon


def make_propagator(system: SemidiscreteSystem, kind: Optional[str] = None,
                    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT) -> Propagator:
    """Build the propagator for ``system``.

    ``kind`` defaults to ``"spectral"`` for symmetric generators and
    ``"integrator"`` otherwise; the integrator may be requested explicitly for
    symmetric systems (useful as a cross-check).
    """
    if kind is None:
        kind = "spectral" if system.symmetric_flag else "integrator"
    if kind not in ("spectral", "integrator"):
        raise ValidationError("kind", f"unknown propagator kind {kind!r}")
    if kind == "spectral" and not system.symmetric_flag:
        raise ValidationError("kind", "the spectral propagator needs a symmetric generator")

    if kind == "spectral":
        a = system.a_matrix
        try:
            lam, q = np.linalg.eigh(0.5 * (a + a.T))
            scale = max(np.max(np.abs(a)), np.finfo(float).tiny)
            recon = np.max(np.abs((q * lam) @ q.T - a)) if a.size else 0.0
            ortho = np.max(np.abs(q.T @ q - np.eye(a.shape[0])), initial=0.0)
            if recon > RECONSTRUCTION_RTOL * scale or ortho > ORTHONORMALITY_TOL:
                raise np.linalg.LinAlgError(
                    f"eigendecomposition residual {recon:.2e}, orthonormality {ortho:.2e}")
        except np.linalg.LinAlgError as exc:
            warnings.warn(f"eigendecomposition failed ({exc}); using the integrator",
                          RuntimeWarning, stacklevel=2)
            prop = _make_integrator(system, steps_per_unit)
            return Propagator(system, "integrator", steps=prop.steps, dt=prop.dt,
                              powers=prop.powers, fallback_warning=True)
        lam.setflags(write=False)
        q.setflags(write=False)
        return Propagator(system, "spectral", eigenvalues=lam, eigenvectors=q)
    return _make_integrator(system, steps_per_unit)


def _make_integrator(system: SemidiscreteSystem, steps_per_unit: int) -> Propagator:
    if steps_per_unit < 1:
        raise ValidationError("steps_per_unit", "must be at least 1")
    a = system.a_matrix
    steps = max(1, math.ceil(steps_per_unit * system.horizon))
    while _truncation_estimate(a, system.horizon / steps) > LOCAL_TRUNCATION_TOL:
        steps *= 2
    dt = system.horizon / steps
    powers = [_rk4_matrix(dt * a)]
    for _ in range(steps.bit_length()):
        powers.append(powers[-1] @ powers[-1])
    for p in powers:
        p.setflags(write=False)
    return Propagator(system, "integrator", steps=steps, dt=dt, powers=tuple(powers))


def exp_action(prop: Propagator, t: float, v, adjoint: bool = False) -> np.ndarray:
    """Return ``e^{tA} v`` (``e^{tA*} v`` when ``adjoint``).

    ``v`` may be a vector of length ``n_x`` or an ``(n_x, k)`` block whose
    columns are propagated together.
    """
    t = float(t)
    if not math.isfinite(t) or t < 0:
        raise ValidationError("t", f"must be nonnegative, got {t}")
    if t > prop.horizon * (1 + 1e-12):
        raise ValidationError("t", f"{t} exceeds the horizon {prop.horizon}")
    v = np.asarray(v, dtype=float)
    if v.shape[0] != prop.system.n_x:
        raise ValidationError("v", f"expected leading dimension {prop.system.n_x}, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError("v", "entries must be finite")
    if t == 0.0:
        return v.copy()

    if prop.kind == "spectral":
        lam, q = prop.eigenvalues, prop.eigenvectors
        decay = np.exp(t * lam)
        coeff = q.T @ v
        coeff = decay * coeff if coeff.ndim == 1 else decay[:, None] * coeff
        return q @ coeff

    a = prop.system.a_matrix.T if adjoint else prop.system.a_matrix
    m = int(math.floor(t / prop.dt))
    rest = t - m * prop.dt
    if rest < 0:
        m, rest = m - 1, rest + prop.dt
    out = v
    j = 0
    while m:
        if m & 1:
            step = prop.powers[j]
            out = (step.T if adjoint else step) @ out
        m >>= 1
        j += 1
    if rest > 0:
        out = _rk4_apply(a, rest, out)
    return np.array(out, copy=True)
