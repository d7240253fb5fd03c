"""Kinematic single-track vehicle model with additive disturbance.

State ``(x, y, theta, v)``, input ``(u, phi)``::

    x'     = v cos(theta) + d_x . w
    y'     = v sin(theta) + d_y . w
    theta' = (v / wheelbase) * phi
    v'     = u + d_v . w

The disturbance ``w`` lives in a polytope ``{w : A w <= b}`` and enters only
through the channels selected at construction (default: one channel on v').
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

STATE_DIM = 4
INPUT_DIM = 2
CHANNELS = ("x", "y", "v")
_CHANNEL_ROW = {"x": 0, "y": 1, "v": 3}

DEFAULT_WHEELBASE = 2.5
DEFAULT_DT = 0.1


class ContractError(ValueError):
    """Raised when an operation's preconditions are violated."""


class IntegrationError(ArithmeticError):
    """Raised when a numeric integration step produces a non-finite state."""


class VehicleState(NamedTuple):
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    v: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


class ControlInput(NamedTuple):
    u: float = 0.0
    phi: float = 0.0


class AffineDecomposition(NamedTuple):
    """Drift ``f`` (4,), input matrix ``g`` (4, 2) and disturbance matrix ``d`` (4, m_w)."""

    f: np.ndarray
    g: np.ndarray
    d: np.ndarray


class DisturbancePolytope:
    """The disturbance set ``W = {w : A w <= b}``.

    Construction checks that ``W`` is nonempty, bounded and contains ``w = 0``.
    Axis-aligned boxes are recognised and checked by vertex enumeration; any
    other polytope is checked with an LP per coordinate direction.
    """

    def __init__(self, A, b):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise ContractError(f"A has {A.shape[0]} rows but b has {b.shape[0]} entries")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ContractError("polytope data must be finite")
        self.A = A
        self.b = b
        self._box = self._detect_box()
        self._validate()

    @classmethod
    def box(cls, lo: Sequence[float], hi: Sequence[float]) -> "DisturbancePolytope":
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ContractError("box bounds must have equal length")
        m = lo.size
        eye = np.eye(m)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    @classmethod
    def zero(cls, dim: int = 1) -> "DisturbancePolytope":
        return cls.box(np.zeros(dim), np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def is_box(self) -> bool:
        return self._box is not None

    def box_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self._box is None:
            raise ContractError("polytope is not an axis-aligned box")
        return self._box

    def vertices(self) -> np.ndarray:
        """All ``2**m`` corners of a box polytope (duplicates kept for degenerate boxes)."""
        lo, hi = self.box_bounds()
        return np.array(list(itertools.product(*zip(lo, hi))), dtype=float).reshape(-1, self.dim)

    def contains(self, w, tol: float = 1e-12) -> bool:
        w = np.asarray(w, dtype=float).reshape(-1)
        return bool(np.all(self.A @ w <= self.b + tol))

    def _detect_box(self):
        m = self.dim
        lo = np.full(m, -np.inf)
        hi = np.full(m, np.inf)
        for row, bound in zip(self.A, self.b):
            nz = np.flatnonzero(row)
            if nz.size != 1:
                return None
            j = nz[0]
            scale = row[j]
            if scale > 0:
                hi[j] = min(hi[j], bound / scale)
            else:
                lo[j] = max(lo[j], bound / scale)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            return None
        return lo, hi

    def _validate(self) -> None:
        if np.any(self.b < 0):
            raise ContractError("disturbance set must contain w = 0 (b >= 0 required)")
        if self._box is not None:
            lo, hi = self._box
            if np.any(lo > hi):
                raise ContractError("disturbance box is empty")
            corners = self.vertices()
            if not np.all(self.A @ corners.T <= self.b[:, None] + 1e-12):
                raise ContractError("box vertices violate the inequality description")
            return
        from scipy.optimize import linprog

        for j in range(self.dim):
            for sign in (1.0, -1.0):
                c = np.zeros(self.dim)
                c[j] = -sign
                res = linprog(c, A_ub=self.A, b_ub=self.b, bounds=[(None, None)] * self.dim,
                              method="highs")
                if res.status == 3:
                    raise ContractError("disturbance set is unbounded (inadmissible)")
                if res.status != 0:
                    raise ContractError(f"disturbance set check failed: {res.message}")


def disturbance_matrix(channels: Sequence[str]) -> np.ndarray:
    """Map disturbance channels (subset of ``x``, ``y``, ``v``) into state rows."""
    d = np.zeros((STATE_DIM, len(channels)))
    for k, name in enumerate(channels):
        if name not in _CHANNEL_ROW:
            raise ContractError(f"unknown disturbance channel {name!r}; expected one of {CHANNELS}")
        d[_CHANNEL_ROW[name], k] = 1.0
    return d


@dataclass(frozen=True)
class VehicleModel:
    wheelbase: float = DEFAULT_WHEELBASE
    channels: tuple[str, ...] = ("v",)

    def __post_init__(self):
        if not self.wheelbase > 0:
            raise ContractError("wheelbase must be positive")
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "_d", disturbance_matrix(self.channels))

    @property
    def disturbance_dim(self) -> int:
        return len(self.channels)

    @property
    def d(self) -> np.ndarray:
        return self._d

    def _check_w(self, w) -> np.ndarray:
        w = np.zeros(self.disturbance_dim) if w is None else np.asarray(w, dtype=float).reshape(-1)
        if w.size != self.disturbance_dim:
            raise ContractError(f"disturbance has {w.size} entries, model expects {self.disturbance_dim}")
        return w

    def derivative(self, s: VehicleState, c: ControlInput, w=None) -> np.ndarray:
        w = self._check_w(w)
        x, y, theta, v = s
        out = np.array([
            v * math.cos(theta),
            v * math.sin(theta),
            (v / self.wheelbase) * c[1],
            c[0],
        ])
        return out + self._d @ w

    def affine_at(self, s: VehicleState) -> AffineDecomposition:
        _, _, theta, v = s
        f = np.array([v * math.cos(theta), v * math.sin(theta), 0.0, 0.0])
        g = np.zeros((STATE_DIM, INPUT_DIM))
        g[3, 0] = 1.0
        g[2, 1] = v / self.wheelbase
        return AffineDecomposition(f, g, self._d.copy())

    def step(self, s: VehicleState, c: ControlInput, w=None, dt: float = DEFAULT_DT) -> VehicleState:
        """One classical RK4 step with ``c`` and ``w`` held over the interval; speed clamped at 0."""
        if not dt > 0:
            raise ContractError("dt must be positive")
        w = self._check_w(w)
        y0 = np.asarray(s, dtype=float)

        def rhs(y):
            return self.derivative(VehicleState(*y), c, w)

        k1 = rhs(y0)
        k2 = rhs(y0 + 0.5 * dt * k1)
        k3 = rhs(y0 + 0.5 * dt * k2)
        k4 = rhs(y0 + dt * k3)
        y1 = y0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y1)):
            raise IntegrationError(f"non-finite state after step: {y1}")
        if y1[3] < 0.0:
            y1[3] = 0.0
        return VehicleState(*(float(q) for q in y1))
