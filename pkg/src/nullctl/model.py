"""Semidiscrete control systems y' = A y + B u.

The state space carries the inner product ``<x, y> = weight * x.y``.  For the
finite-difference heat models ``weight = h``, which makes ``||.||`` the grid
L2 norm of the nodal values; generic dense systems default to ``weight = 1``.
All adjoints (``B*``, ``A*``) are taken with respect to this inner product and
the Euclidean inner product on the control space, so ``B* = weight * B.T`` and
``A* = A.T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ValidationError

SCHEMES = ("eliminated", "paper-verbatim")
SYMMETRY_RTOL = 1e-12


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SemidiscreteSystem:
    """Finite-dimensional linear control system on a fixed horizon.

    Parameters
    ----------
    a_matrix : (n_x, n_x) array
        Generator ``A``.
    b_matrix : (n_x, n_u) array
        Control operator ``B``.
    h : float
        Mesh width in (0, 1); enters the penalty ``h**beta``.
    horizon : float
        Final time ``T``.
    weight : float
        Scale of the state inner product.
    scheme, c, nodes :
        Provenance for systems built by :func:`build_heat1d`; ``nodes`` are the
        physical abscissae used by :func:`sample_initial`.
    """

    a_matrix: np.ndarray
    b_matrix: np.ndarray
    h: float
    horizon: float
    weight: float = 1.0
    scheme: Optional[str] = None
    c: Optional[float] = None
    nodes: Optional[np.ndarray] = field(default=None, repr=False)
    symmetric_flag: bool = field(init=False)

    def __post_init__(self):
        a = _frozen(self.a_matrix)
        b = _frozen(self.b_matrix)
        if b.ndim == 1:
            b = _frozen(b[:, None])
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValidationError("a_matrix", f"must be square, got shape {a.shape}")
        if b.ndim != 2 or b.shape[0] != a.shape[0]:
            raise ValidationError(
                "b_matrix", f"needs {a.shape[0]} rows, got shape {b.shape}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValidationError("a_matrix", "system matrices must be finite")
        if not (math.isfinite(self.h) and 0.0 < self.h < 1.0):
            raise ValidationError("h", f"must lie in (0, 1), got {self.h}")
        if not (math.isfinite(self.horizon) and self.horizon > 0.0):
            raise ValidationError("horizon", f"must be positive, got {self.horizon}")
        if not (math.isfinite(self.weight) and self.weight > 0.0):
            raise ValidationError("weight", f"must be positive, got {self.weight}")
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "b_matrix", b)
        if self.nodes is not None:
            object.__setattr__(self, "nodes", _frozen(self.nodes))
        scale = np.max(np.abs(a)) if a.size else 0.0
        sym = bool(np.max(np.abs(a - a.T), initial=0.0) <= SYMMETRY_RTOL * scale)
        object.__setattr__(self, "symmetric_flag", sym)

    @property
    def n_x(self) -> int:
        return self.a_matrix.shape[0]

    @property
    def n_u(self) -> int:
        return self.b_matrix.shape[1]

    def inner(self, x, y) -> float:
        return float(self.weight * np.dot(x, y))

    def norm(self, x) -> float:
        return float(math.sqrt(self.weight) * np.linalg.norm(x))

    def b_adjoint(self, v):
        """Apply ``B*`` to a state vector (or to the rows of a stack of them)."""
        return self.weight * (np.asarray(v) @ self.b_matrix)


def from_matrices(a_matrix, b_matrix, horizon: float, h: float = 0.5,
                  weight: float = 1.0) -> SemidiscreteSystem:
    """Wrap user-supplied dense matrices as a system."""
    return SemidiscreteSystem(a_matrix, b_matrix, h=h, horizon=horizon, weight=weight)


def build_heat1d(n: int, c: float = 1.0, horizon: float = 1.0,
                 scheme: str = "eliminated", weighted: bool = True) -> SemidiscreteSystem:
    """Finite-difference heat equation y_t = y_xx + c^2 y on (0, 1).

    The same scalar Dirichlet control acts at both ends; ``h = 1/(n+1)``.

    ``eliminated``: the boundary values are substituted into the stencil, so the
    state holds the ``n`` interior nodes, ``A`` is the symmetric tridiagonal
    matrix and ``B = (e_1 + e_n) / h**2``.

    ``paper-verbatim``: the state holds all ``n + 2`` nodes.  The two boundary
    rows of ``A`` vanish and ``B = (1, 0, ..., 0, 1)``, so the boundary values
    integrate the control; interior rows carry the full three-point stencil,
    including the coupling to the boundary columns.

    ``weighted=False`` switches the state inner product to the plain Euclidean
    one.
    """
    if isinstance(n, bool) or int(n) != n or n < 2:
        raise ValidationError("n", f"need an integer n >= 2, got {n}")
    n = int(n)
    if not math.isfinite(c):
        raise ValidationError("c", f"must be finite, got {c}")
    if not (math.isfinite(horizon) and horizon > 0):
        raise ValidationError("T", f"must be positive and finite, got {horizon}")
    if scheme not in SCHEMES:
        raise ValidationError("scheme", f"expected one of {SCHEMES}, got {scheme!r}")

    h = 1.0 / (n + 1)
    inv_h2 = (n + 1) ** 2
    diag = (c * c * h * h - 2.0) * inv_h2
    if scheme == "eliminated":
        a = (np.diag(np.full(n, diag))
             + np.diag(np.full(n - 1, float(inv_h2)), 1)
             + np.diag(np.full(n - 1, float(inv_h2)), -1))
        b = np.zeros((n, 1))
        b[0, 0] = b[-1, 0] = inv_h2
        nodes = h * np.arange(1, n + 1)
    else:
        m = n + 2
        a = np.zeros((m, m))
        rows = np.arange(1, n + 1)
        a[rows, rows] = diag
        a[rows, rows - 1] = inv_h2
        a[rows, rows + 1] = inv_h2
        b = np.zeros((m, 1))
        b[0, 0] = b[-1, 0] = 1.0
        nodes = h * np.arange(m)
    return SemidiscreteSystem(a, b, h=h, horizon=float(horizon),
                              weight=h if weighted else 1.0,
                              scheme=scheme, c=float(c), nodes=nodes)


@dataclass(frozen=True)
class InitialData:
    y0: np.ndarray
    source: str = "raw-vector"

    def __post_init__(self):
        object.__setattr__(self, "y0", _frozen(self.y0))
        if self.source not in ("sampled-function", "raw-vector"):
            raise ValidationError("source", f"unknown source {self.source!r}")


def sample_initial(system: SemidiscreteSystem, f: Callable[[float], float]) -> InitialData:
    """Sample ``f`` at the system's nodes (the interpolation operator P_h)."""
    if system.nodes is None:
        raise ValidationError("system", "generic systems have no nodes to sample at")
    values = np.array([float(f(x)) for x in system.nodes])
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        i = int(bad[0])
        raise ValidationError("y0", f"non-finite sample at node {i} (x = {system.nodes[i]})")
    return InitialData(values, "sampled-function")


def initial_from_vector(system: SemidiscreteSystem, values) -> InitialData:
    values = np.asarray(values, dtype=float).ravel()
    if values.shape != (system.n_x,):
        raise ValidationError("y0", f"expected length {system.n_x}, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise ValidationError("y0", "entries must be finite")
    return InitialData(values, "raw-vector")


def as_state(system: SemidiscreteSystem, y0) -> np.ndarray:
    """Accept an :class:`InitialData` or a plain vector and return the array."""
    values = y0.y0 if isinstance(y0, InitialData) else np.asarray(y0, dtype=float)
    if values.shape != (system.n_x,):
        raise ValidationError("y0", f"expected length {system.n_x}, got shape {values.shape}")
    return values


def gaussian_profile(x: float) -> float:
    """The initial datum exp(-x^2) used in the heat experiments."""
    return math.exp(-x * x)
