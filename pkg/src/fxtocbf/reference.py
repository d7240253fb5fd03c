"""Position-indexed reference lookup on a cubic trajectory.

The observed position is mapped to the instant at which the optimal
trajectory passes through it; the speed and control there become the
tracking references.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .ocp import CubicTrajectory

POSITION_TOL = 1e-9
MAX_ITER = 100


class ReferenceAmbiguityError(ValueError):
    """The position profile is not monotone over the window."""

    def __init__(self, roots):
        self.roots = tuple(roots)
        super().__init__(f"non-monotone reference trajectory; in-window roots: {self.roots}")


class ReferenceSample(NamedTuple):
    t_ref: float
    v_ref: float
    u_ref: float
    clamped: bool


def _speed_extrema(traj: CubicTrajectory) -> tuple[float, float]:
    t0, tf = traj.window
    cands = [t0, tf]
    if traj.a != 0.0:
        tc = -traj.b / traj.a
        if t0 < tc < tf:
            cands.append(tc)
    vals = [traj.speed(t) for t in cands]
    return min(vals), max(vals)


def _in_window_roots(traj: CubicTrajectory, x_obs: float) -> list[float]:
    t0, tf = traj.window
    coeffs = [traj.a / 6.0, traj.b / 2.0, traj.c, traj.d - x_obs]
    while coeffs and coeffs[0] == 0.0:
        coeffs.pop(0)
    if len(coeffs) < 2:
        return []
    roots = np.roots(coeffs)
    out = sorted(float(r.real) for r in roots if abs(r.imag) < 1e-9 and t0 - 1e-9 <= r.real <= tf + 1e-9)
    return out


def _sample(traj: CubicTrajectory, t: float, clamped: bool) -> ReferenceSample:
    return ReferenceSample(t, traj.speed(t), traj.control(t), clamped)


def map_position(traj: CubicTrajectory, x_obs: float) -> ReferenceSample:
    """Invert ``x*(t) = x_obs`` on the window, clamping to the nearer endpoint when out of range."""
    t0, tf = traj.window
    vmin, vmax = _speed_extrema(traj)
    if vmin < 0.0 < vmax:
        raise ReferenceAmbiguityError(_in_window_roots(traj, x_obs))
    increasing = vmax > 0.0 or vmin == vmax == 0.0
    x0, xf = traj.position(t0), traj.position(tf)
    lo_t, hi_t = t0, tf
    lo_x, hi_x = (x0, xf) if increasing else (xf, x0)
    # ``g`` is increasing in t on the window
    sign = 1.0 if increasing else -1.0
    if x_obs <= lo_x:
        return _sample(traj, t0 if increasing else tf, x_obs < lo_x)
    if x_obs >= hi_x:
        return _sample(traj, tf if increasing else t0, x_obs > hi_x)

    def g(t):
        return sign * (traj.position(t) - x_obs)

    a, b = lo_t, hi_t
    t = a + (b - a) * (x_obs - lo_x) / (hi_x - lo_x) if increasing else b - (b - a) * (x_obs - lo_x) / (hi_x - lo_x)
    for _ in range(MAX_ITER):
        gt = g(t)
        if abs(gt) <= POSITION_TOL:
            break
        if gt > 0.0:
            b = t
        else:
            a = t
        slope = sign * traj.speed(t)
        t_new = t - gt / slope if slope != 0.0 else math.nan
        if not (a < t_new < b):
            t_new = 0.5 * (a + b)
        t = t_new
    return _sample(traj, t, False)
