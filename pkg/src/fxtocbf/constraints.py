"""CLF/CBF values, gradients and their robust linear rows.

Every row is linear in the decision variables ``u``, ``phi``, the relaxation
variables ``delta_*`` / ``e_*`` and the LP dual variables that carry the
worst-case disturbance term. State-dependent quantities are evaluated at the
current state and folded into coefficients and right-hand sides.

Sign conventions for the disturbance terms
------------------------------------------
CLF rows must hold for the worst disturbance, ``sup_w L_dV w``; with
``W = {w : A w <= b}`` this equals ``min b'lam`` over ``A'lam = L_dV,
lam >= 0``, so the row carries ``+ b'lam`` on its left side.

CBF rows need ``L_gh u + L_fh + delta h + L_dh w >= 0`` for every ``w``, i.e.
the left side must dominate ``-inf_w L_dh w``. The infimum equals
``max b'mu`` over ``A'mu = L_dh, mu <= 0``, so the row reads
``L_gh u + L_fh + delta h + b'mu >= 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .dynamics import AffineDecomposition, DisturbancePolytope, VehicleState

LE, EQ, GE = "<=", "=", ">="

U, PHI = "u", "phi"
DELTA_XF = "delta_xf"
CLF_GOALS = ("vref", "theta", "ydes")
CBF_KINDS = ("xp", "m", "vmin", "vmax")


def delta_id(kind: str) -> str:
    return f"delta_{kind}"


def slack_id(goal: str) -> str:
    return f"e_{goal}"


class ConstraintRow(NamedTuple):
    coeffs: dict
    rhs: float
    sense: str
    tag: str

    def lhs(self, values: dict) -> float:
        return sum(c * values.get(k, 0.0) for k, c in self.coeffs.items())

    def violation(self, values: dict) -> float:
        r = self.lhs(values) - self.rhs
        if self.sense == LE:
            return max(r, 0.0)
        if self.sense == GE:
            return max(-r, 0.0)
        return abs(r)


@dataclass
class RowBlock:
    rows: list = field(default_factory=list)
    bounds: dict = field(default_factory=dict)

    def extend(self, other: "RowBlock") -> "RowBlock":
        self.rows.extend(other.rows)
        self.bounds.update(other.bounds)
        return self


# --------------------------------------------------------------------------- parameters


@dataclass(frozen=True)
class FxTParams:
    mu: float = 5.0
    T_min: float = 0.1
    p1: float = 2.0

    def __post_init__(self):
        if not self.mu > 1:
            raise ValueError("mu must exceed 1")
        if not self.T_min > 0:
            raise ValueError("T_min must be positive")
        if not self.p1 > 0:
            raise ValueError("p1 must be positive")


@dataclass(frozen=True)
class SafetyParams:
    phi_rt: float = 0.6
    eps: float = 2.0
    v_min: float = 2.0
    v_max: float = 35.0
    u_min: float = -6.0
    u_max: float = 3.0
    phi_min: float = -0.1
    phi_max: float = 0.1

    def __post_init__(self):
        if not self.phi_rt > 0:
            raise ValueError("reaction time phi_rt must be positive")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be below v_max")
        if not self.u_min < self.u_max:
            raise ValueError("u_min must be below u_max")
        if not self.phi_min < self.phi_max:
            raise ValueError("phi_min must be below phi_max")


@dataclass(frozen=True)
class ConstraintGains:
    eps_vref: float = 1.0
    eps_theta: float = 1.0
    eps_ydes: float = 1.0
    # gain of the derivative-augmented lateral CLF; None uses the bare square
    p_lat: Optional[float] = 1.0
    delta_max: float = 10.0

    def __post_init__(self):
        for name in ("eps_vref", "eps_theta", "eps_ydes"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.p_lat is not None and not self.p_lat > 0:
            raise ValueError("p_lat must be positive")
        if not self.delta_max > 0:
            raise ValueError("delta_max must be positive")

    def eps(self, goal: str) -> float:
        return getattr(self, f"eps_{goal}")


@dataclass(frozen=True)
class MergingGeometry:
    L_i: float
    L_ia: float
    v0: float
    phi_rt: float
    eps: float

    def __post_init__(self):
        if not self.L_i > 0:
            raise ValueError("L_i must be positive")
        if not self.v0 > 0:
            raise ValueError("v0 must be positive")

    @classmethod
    def from_positions(cls, x_cf: float, x_i0: float, x_a0: float, v0: float,
                       phi_rt: float, eps: float) -> "MergingGeometry":
        return cls(x_cf - x_i0, x_cf - x_a0, v0, phi_rt, eps)

    @property
    def offset(self) -> float:
        return (self.L_ia - self.L_i + self.eps) / self.v0

    @property
    def slope(self) -> float:
        """Derivative of the reaction time with respect to progress [s/m]."""
        return (self.phi_rt + self.offset) / self.L_i


# --------------------------------------------------------------------------- scalar functions


class FxTGains(NamedTuple):
    alpha1: float
    alpha2: float
    gamma1: float
    gamma2: float
    T_ud: float


def fxt_gains(p: FxTParams, t: float, tf_star: float) -> FxTGains:
    T_ud = max(p.T_min, tf_star - t)
    alpha = p.mu * math.pi / (2.0 * T_ud)
    return FxTGains(alpha, alpha, 1.0 + 1.0 / p.mu, 1.0 - 1.0 / p.mu, T_ud)


def goal_clf(state: VehicleState, x_f: float, p1: float) -> float:
    e = state.x - x_f
    return p1 * e * e + 2.0 * state.v * math.cos(state.theta) * e


def goal_clf_grad(state: VehicleState, x_f: float, p1: float) -> np.ndarray:
    e = state.x - x_f
    c, s = math.cos(state.theta), math.sin(state.theta)
    return np.array([2.0 * p1 * e + 2.0 * state.v * c, 0.0, -2.0 * state.v * s * e, 2.0 * c * e])


class SoftClfValues(NamedTuple):
    V_vref: float
    V_theta: float
    V_ydes: float


def soft_clf_values(state: VehicleState, v_ref: float, y_des: float) -> SoftClfValues:
    return SoftClfValues((state.v - v_ref) ** 2, state.theta ** 2, (state.y - y_des) ** 2)


def soft_clf_grads(state: VehicleState, v_ref: float, y_des: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (
        np.array([0.0, 0.0, 0.0, 2.0 * (state.v - v_ref)]),
        np.array([0.0, 0.0, 2.0 * state.theta, 0.0]),
        np.array([0.0, 2.0 * (state.y - y_des), 0.0, 0.0]),
    )


def lateral_clf(state: VehicleState, y_des: float, p_lat: float) -> float:
    """Lateral CLF augmented with its first derivative so that steering appears in ``L_g``."""
    e = state.y - y_des
    return p_lat * e * e + 2.0 * state.v * math.sin(state.theta) * e


def lateral_clf_grad(state: VehicleState, y_des: float, p_lat: float) -> np.ndarray:
    e = state.y - y_des
    c, s = math.cos(state.theta), math.sin(state.theta)
    return np.array([0.0, 2.0 * p_lat * e + 2.0 * state.v * s, 2.0 * state.v * c * e, 2.0 * s * e])


def phi_reaction(geom: MergingGeometry, progress: float) -> float:
    K = geom.offset
    return (geom.phi_rt + K) * progress / geom.L_i - K


class Neighbors(NamedTuple):
    x_prec: Optional[float] = None
    x_adj: Optional[float] = None


class CbfValues(NamedTuple):
    h_xp: Optional[float]
    h_m: Optional[float]
    h_vmin: float
    h_vmax: float


def cbf_values(state: VehicleState, neighbors: Neighbors, geom: Optional[MergingGeometry],
               params: SafetyParams, progress: float = 0.0) -> CbfValues:
    h_xp = None
    if neighbors.x_prec is not None:
        h_xp = neighbors.x_prec - state.x - params.phi_rt * state.v - params.eps
    h_m = None
    if neighbors.x_adj is not None and geom is not None:
        h_m = neighbors.x_adj - state.x - phi_reaction(geom, progress) * state.v - params.eps
    return CbfValues(h_xp, h_m, state.v - params.v_min, params.v_max - state.v)


# --------------------------------------------------------------------------- barriers


@dataclass
class Barrier:
    """One CBF evaluated at the current state.

    ``grad`` is taken with respect to the ego state; ``exo_rate`` is the
    contribution of a neighbour's motion to ``dh/dt``. ``extra_input``,
    ``extra_dist`` and ``margin`` stay zero for the continuous-time row and
    are filled in by :func:`sampled_data_correction`.
    """

    kind: str
    value: float
    grad: np.ndarray
    exo_rate: float = 0.0
    phi_value: float = 0.0
    phi_slope: float = 0.0
    extra_input: np.ndarray = field(default_factory=lambda: np.zeros(2))
    extra_dist: Optional[np.ndarray] = None
    margin: float = 0.0


def barrier_grad(kind: str, state: VehicleState, params: SafetyParams,
                 geom: Optional[MergingGeometry] = None, progress: float = 0.0) -> np.ndarray:
    if kind == "xp":
        return np.array([-1.0, 0.0, 0.0, -params.phi_rt])
    if kind == "m":
        return np.array([-1.0 - geom.slope * state.v, 0.0, 0.0, -phi_reaction(geom, progress)])
    if kind == "vmin":
        return np.array([0.0, 0.0, 0.0, 1.0])
    if kind == "vmax":
        return np.array([0.0, 0.0, 0.0, -1.0])
    raise ValueError(f"unknown barrier {kind!r}")


def barriers(state: VehicleState, neighbors: Neighbors, geom: Optional[MergingGeometry],
             params: SafetyParams, progress: float = 0.0,
             rates: Neighbors = Neighbors(0.0, 0.0)) -> list[Barrier]:
    """Barriers present for this state; absent neighbours omit their rows."""
    vals = cbf_values(state, neighbors, geom, params, progress)
    out = []
    if vals.h_xp is not None:
        out.append(Barrier("xp", vals.h_xp, barrier_grad("xp", state, params), rates.x_prec or 0.0))
    if vals.h_m is not None:
        out.append(Barrier("m", vals.h_m, barrier_grad("m", state, params, geom, progress),
                           rates.x_adj or 0.0, phi_reaction(geom, progress), geom.slope))
    out.append(Barrier("vmin", vals.h_vmin, barrier_grad("vmin", state, params)))
    out.append(Barrier("vmax", vals.h_vmax, barrier_grad("vmax", state, params)))
    return out


class MotionBounds(NamedTuple):
    """Magnitude bounds on a vehicle's longitudinal acceleration and steering over one step."""

    a_abs: float
    phi_abs: float


class NeighborMotion(NamedTuple):
    """Lower bound on a neighbour's displacement over one step, as a Taylor model."""

    accel_lo: float
    jerk_abs: float


def x_jerk_bound(state: VehicleState, bounds: MotionBounds, wheelbase: float, dt: float) -> float:
    """Bound on ``|d^3 x / dt^3|`` over one held-input step of the kinematic model."""
    v_hi = state.v + bounds.a_abs * dt
    s_hi = min(1.0, abs(math.sin(state.theta)) + dt * v_hi * bounds.phi_abs / wheelbase)
    return (3.0 * s_hi * bounds.a_abs * v_hi * bounds.phi_abs / wheelbase
            + v_hi ** 3 * bounds.phi_abs ** 2 / wheelbase ** 2)


def sampled_data_correction(b: Barrier, state: VehicleState, dyn: AffineDecomposition,
                            wheelbase: float, dt: float, ego: MotionBounds,
                            neighbor: Optional[NeighborMotion] = None) -> Barrier:
    """Add the second-order intra-step terms so the row certifies ``h(t+dt) >= (1 - delta dt) h``.

    With inputs held over ``[t, t+dt]`` the barrier evolves as
    ``h + dt hdot + dt^2/2 hddot + R``; ``hddot`` is linear in ``(a, phi)`` at
    ``t`` and ``R`` is bounded by jerk bounds of the ego and the neighbour.
    """
    if b.kind in ("vmin", "vmax"):
        return b  # v'' = 0 under held inputs: the row is already exact
    c, s = math.cos(state.theta), math.sin(state.theta)
    v = state.v
    # x'' = c a - (v^2 s / l) phi at t
    xdd = np.array([c, -(v * v * s) / wheelbase])
    jx = x_jerk_bound(state, ego, wheelbase, dt)
    if b.kind == "xp":
        hdd = -xdd
        j_ego = jx
    else:
        k = 1.0 + b.phi_slope * v
        hdd = -k * xdd - np.array([2.0 * b.phi_slope * v * c, 0.0])
        v_hi = v + ego.a_abs * dt
        xdd_abs = ego.a_abs + v_hi * v_hi * ego.phi_abs / wheelbase
        j_ego = jx * (1.0 + abs(b.phi_slope) * v_hi) + 3.0 * abs(b.phi_slope) * xdd_abs * ego.a_abs
    half = 0.5 * dt
    extra_dist = half * hdd[0] * dyn.d[3, :]
    # the steering part of hddot is bounded, not credited: crediting it lets the
    # QP steer sideways to slow down along x
    margin = (dt * dt / 6.0) * j_ego + half * abs(hdd[1]) * ego.phi_abs
    hdd = np.array([hdd[0], 0.0])
    if neighbor is not None:
        margin += -half * neighbor.accel_lo + (dt * dt / 6.0) * neighbor.jerk_abs
    return Barrier(b.kind, b.value, b.grad, b.exo_rate, b.phi_value, b.phi_slope,
                   b.extra_input + half * hdd, extra_dist, b.margin + margin)


# --------------------------------------------------------------------------- dual embedding


class DualEmbedding(NamedTuple):
    var_ids: list
    equalities: list
    bounds: dict
    bterm: dict


def dualize(direction: str, c, W: DisturbancePolytope, name: str) -> DualEmbedding:
    """Replace ``sup``/``inf`` of ``c'w`` over ``W`` by dual variables.

    ``sup``: ``lam >= 0``, ``A'lam = c``; ``b'lam`` upper-bounds the supremum and
    is tight at the minimiser. ``inf``: ``mu <= 0``, ``A'mu = c``; ``b'mu``
    lower-bounds the infimum and is tight at the maximiser.
    """
    if direction not in ("sup", "inf"):
        raise ValueError("direction must be 'sup' or 'inf'")
    c = np.asarray(c, dtype=float).reshape(-1)
    if c.size != W.dim:
        raise ValueError(f"gradient has {c.size} entries, polytope dimension is {W.dim}")
    ids = [f"{name}[{k}]" for k in range(W.A.shape[0])]
    eqs = []
    for j in range(W.dim):
        coeffs = {ids[k]: float(W.A[k, j]) for k in range(len(ids)) if W.A[k, j] != 0.0}
        eqs.append(ConstraintRow(coeffs, float(c[j]), EQ, f"{name}:dual[{j}]"))
    sign = (0.0, math.inf) if direction == "sup" else (-math.inf, 0.0)
    bounds = {k: sign for k in ids}
    bterm = {ids[k]: float(W.b[k]) for k in range(len(ids)) if W.b[k] != 0.0}
    return DualEmbedding(ids, eqs, bounds, bterm)


def _input_coeffs(lg: np.ndarray) -> dict:
    return {U: float(lg[0]), PHI: float(lg[1])}


def _merge(coeffs: dict, extra: dict) -> dict:
    for k, val in extra.items():
        coeffs[k] = coeffs.get(k, 0.0) + val
    return coeffs


# --------------------------------------------------------------------------- row builders


GOAL_TOL = 1e-12


def build_fxt_row(state: VehicleState, x_f: float, p: FxTParams, dyn: AffineDecomposition,
                  W: Optional[DisturbancePolytope], t: float, tf_star: float) -> RowBlock:
    """Fixed-time goal CLF row over ``(u, phi, delta_xf, lam_xf)``.

    ``L_gV u + L_fV + b'lam + delta_xf V + a1 max(0,V)^g1 + a2 max(0,V)^g2 <= 0``
    together with ``A'lam = L_dV`` and ``lam >= 0``. ``W=None`` drops the
    disturbance term. Exactly at the goal with ``V = 0`` and ``L_gV = 0`` no
    decision variable enters the row; when it then fails (``L_fV > 0``, the
    vehicle passing through ``x_f``) it is dropped rather than left unsatisfiable.
    """
    V = goal_clf(state, x_f, p.p1)
    grad = goal_clf_grad(state, x_f, p.p1)
    if (abs(V) <= GOAL_TOL and np.abs(grad @ dyn.g).max() <= GOAL_TOL
            and grad @ dyn.f > GOAL_TOL):
        return RowBlock()
    gains = fxt_gains(p, t, tf_star)
    Vp = max(0.0, V)
    decay = gains.alpha1 * Vp ** gains.gamma1 + gains.alpha2 * Vp ** gains.gamma2
    coeffs = _input_coeffs(grad @ dyn.g)
    coeffs[DELTA_XF] = V
    block = RowBlock()
    if W is not None:
        emb = dualize("sup", grad @ dyn.d, W, "lam_xf")
        _merge(coeffs, emb.bterm)
        block.rows.extend(emb.equalities)
        block.bounds.update(emb.bounds)
    block.rows.insert(0, ConstraintRow(coeffs, -(grad @ dyn.f) - decay, LE, "fxt_clf"))
    return block


def soft_rows_from(goal: str, V: float, grad: np.ndarray, eps_j: float,
                   dyn: AffineDecomposition, W: Optional[DisturbancePolytope]) -> RowBlock:
    coeffs = _input_coeffs(grad @ dyn.g)
    coeffs[slack_id(goal)] = -1.0
    block = RowBlock(bounds={slack_id(goal): (0.0, math.inf)})
    if W is not None:
        emb = dualize("sup", grad @ dyn.d, W, f"lam_{goal}")
        _merge(coeffs, emb.bterm)
        block.rows.extend(emb.equalities)
        block.bounds.update(emb.bounds)
    block.rows.insert(0, ConstraintRow(coeffs, -(grad @ dyn.f) - eps_j * V, LE, f"clf_{goal}"))
    return block


def soft_clf_terms(state: VehicleState, v_ref: float, y_des: float,
                   gains: ConstraintGains) -> list[tuple[str, float, np.ndarray]]:
    vals = soft_clf_values(state, v_ref, y_des)
    grads = soft_clf_grads(state, v_ref, y_des)
    terms = [("vref", vals.V_vref, grads[0]), ("theta", vals.V_theta, grads[1])]
    if gains.p_lat is None:
        terms.append(("ydes", vals.V_ydes, grads[2]))
    else:
        terms.append(("ydes", lateral_clf(state, y_des, gains.p_lat),
                      lateral_clf_grad(state, y_des, gains.p_lat)))
    return terms


def build_soft_rows(state: VehicleState, v_ref: float, y_des: float, gains: ConstraintGains,
                    dyn: AffineDecomposition, W: Optional[DisturbancePolytope]) -> RowBlock:
    block = RowBlock()
    for goal, V, grad in soft_clf_terms(state, v_ref, y_des, gains):
        block.extend(soft_rows_from(goal, V, grad, gains.eps(goal), dyn, W))
    return block


def build_cbf_rows(bars: Sequence[Barrier], dyn: AffineDecomposition,
                   W: Optional[DisturbancePolytope], gains: ConstraintGains) -> RowBlock:
    """``L_gh u + L_fh + delta h + b'mu >= margin`` with ``A'mu = L_dh``, ``mu <= 0``."""
    block = RowBlock()
    for b in bars:
        did = delta_id(b.kind)
        lg = b.grad @ dyn.g + b.extra_input
        ld = b.grad @ dyn.d
        if b.extra_dist is not None:
            ld = ld + b.extra_dist
        coeffs = _input_coeffs(lg)
        coeffs[did] = b.value
        block.bounds[did] = (0.0, gains.delta_max)
        rows = []
        if W is not None:
            emb = dualize("inf", ld, W, f"mu_{b.kind}")
            _merge(coeffs, emb.bterm)
            rows = emb.equalities
            block.bounds.update(emb.bounds)
        rhs = b.margin - (b.grad @ dyn.f) - b.exo_rate
        block.rows.append(ConstraintRow(coeffs, rhs, GE, f"cbf_{b.kind}"))
        block.rows.extend(rows)
    return block
