"""Closed-form energy-optimal trajectory for the double integrator.

With running cost ``u**2 / 2`` and no active state or input constraints the
costates are ``lam_x = a`` and ``lam_v = -(a t + b)``, so the optimal control
is affine in time and position is a cubic::

    u(t) = a t + b
    v(t) = a t**2 / 2 + b t + c
    x(t) = a t**3 / 6 + b t**2 / 2 + c t + d
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class DegenerateWindowError(ValueError):
    pass


@dataclass(frozen=True)
class BoundarySpec:
    t0: float
    tf: float
    x0: float
    v0: float
    xf: float
    vf: float

    def __post_init__(self):
        vals = (self.t0, self.tf, self.x0, self.v0, self.xf, self.vf)
        if not all(math.isfinite(q) for q in vals):
            raise ValueError(f"boundary values must be finite: {vals}")
        if not self.tf - self.t0 > 0:
            raise DegenerateWindowError(f"tf ({self.tf}) must exceed t0 ({self.t0})")


class TrajectoryPoint(NamedTuple):
    x: float
    v: float
    u: float
    in_window: bool


@dataclass(frozen=True)
class CubicTrajectory:
    """Constants ``(a, b, c, d)`` of the polynomials in absolute time, plus the window.

    Evaluation runs in shifted time ``tau = t - t0`` with constants kept from
    the solve (or derived from ``(a, b, c, d)`` when constructed directly), so
    a late window does not cost precision.
    """

    a: float
    b: float
    c: float
    d: float
    t0: float
    tf: float
    shifted: tuple = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.shifted is None:
            t0, a, b, c, d = self.t0, self.a, self.b, self.c, self.d
            bs = a * t0 + b
            cs = (a / 2.0 * t0 + b) * t0 + c
            ds = ((a / 6.0 * t0 + b / 2.0) * t0 + c) * t0 + d
            object.__setattr__(self, "shifted", (bs, cs, ds))

    @property
    def window(self) -> tuple[float, float]:
        return (self.t0, self.tf)

    def costate(self, t: float) -> tuple[float, float]:
        """``(lam_x, lam_v)`` at time ``t``."""
        return self.a, -self.control(t)

    def position(self, t: float) -> float:
        bs, cs, ds = self.shifted
        tau = t - self.t0
        return ((self.a / 6.0 * tau + bs / 2.0) * tau + cs) * tau + ds

    def speed(self, t: float) -> float:
        bs, cs, _ = self.shifted
        tau = t - self.t0
        return (self.a / 2.0 * tau + bs) * tau + cs

    def control(self, t: float) -> float:
        return self.a * (t - self.t0) + self.shifted[0]


def _gauss_solve(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting for a small dense system."""
    M = np.array(M, dtype=float)
    r = np.array(rhs, dtype=float)
    n = M.shape[0]
    scale = np.max(np.abs(M))
    for k in range(n):
        p = k + int(np.argmax(np.abs(M[k:, k])))
        if abs(M[p, k]) <= 1e-14 * scale:
            raise DegenerateWindowError("singular boundary system")
        if p != k:
            M[[k, p]] = M[[p, k]]
            r[[k, p]] = r[[p, k]]
        for i in range(k + 1, n):
            m = M[i, k] / M[k, k]
            M[i, k:] -= m * M[k, k:]
            r[i] -= m * r[k]
    out = np.zeros(n)
    for k in range(n - 1, -1, -1):
        out[k] = (r[k] - M[k, k + 1:] @ out[k + 1:]) / M[k, k]
    return out


def solve_unconstrained(bc: BoundarySpec) -> CubicTrajectory:
    """Fit the cubic to the boundary states.

    The 4x4 system is set up in shifted time ``tau = t - t0`` (so raw powers of
    large ``t`` never appear) and the constants are mapped back afterwards.
    """
    T = bc.tf - bc.t0
    if not T > 0:
        raise DegenerateWindowError("tf must exceed t0")
    # unknowns (a, b', c', d') of the shifted polynomials
    M = np.array([
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [T * T / 2.0, T, 1.0, 0.0],
        [T ** 3 / 6.0, T * T / 2.0, T, 1.0],
    ])
    a, bs, cs, ds = _gauss_solve(M, np.array([bc.v0, bc.x0, bc.vf, bc.xf]))
    t0 = bc.t0
    b = bs - a * t0
    c = cs - bs * t0 + a * t0 * t0 / 2.0
    d = ds - cs * t0 + bs * t0 * t0 / 2.0 - a * t0 ** 3 / 6.0
    return CubicTrajectory(float(a), float(b), float(c), float(d), bc.t0, bc.tf,
                           (float(bs), float(cs), float(ds)))


def evaluate(traj: CubicTrajectory, t: float) -> TrajectoryPoint:
    """Position, speed and control at ``t``; times outside the window are extrapolated and flagged."""
    inside = traj.t0 <= t <= traj.tf
    return TrajectoryPoint(traj.position(t), traj.speed(t), traj.control(t), inside)


def energy_cost(traj: CubicTrajectory) -> float:
    """Closed form of the integral of ``u(t)**2 / 2`` over the window."""
    T = traj.tf - traj.t0
    if not T > 0:
        raise DegenerateWindowError("tf must exceed t0")
    u0 = traj.control(traj.t0)
    a = traj.a
    return 0.5 * (u0 * u0 * T + u0 * a * T * T + a * a * T ** 3 / 3.0)
