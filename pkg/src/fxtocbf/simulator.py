"""Closed-loop multi-vehicle lane-change simulation.

All vehicles advance on one clock. At each step the uncooperative vehicle
follows its speed profile, then the CAVs plan front to back so that a
follower's barrier rows can use its leader's committed control, then every
vehicle is integrated with its realized disturbance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import constraints as cs
from .constraints import (
    ConstraintGains, FxTParams, MergingGeometry, MotionBounds, NeighborMotion, Neighbors, SafetyParams,
)
from .dynamics import ControlInput, DisturbancePolytope, VehicleModel, VehicleState
from .ocp import BoundarySpec, CubicTrajectory, solve_unconstrained
from .qp import QpWeights, assemble, solve
from .qp.problem import DU
from .reference import map_position

ROLES = ("C", "S", "i_m", "U")
POLICIES = ("zero", "random", "worst-corner")
N_LANES = 2


class ScenarioError(ValueError):
    """Invalid scenario; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# --------------------------------------------------------------------------- configuration


@dataclass(frozen=True)
class Terminal:
    tf_star: float
    x: float
    v: float


@dataclass(frozen=True)
class VehicleSpec:
    id: str
    role: str
    lane: int
    state: VehicleState
    terminal: Optional[Terminal] = None
    adjacent: Optional[str] = None
    target_lane: Optional[int] = None
    # (time, speed) knots of the uncooperative profile, linear in between
    profile: tuple = ()

    @property
    def is_cav(self) -> bool:
        return self.role != "U"


@dataclass(frozen=True)
class DisturbanceSpec:
    policy: str = "zero"
    channels: tuple = ("v",)
    lo: tuple = (0.0,)
    hi: tuple = (0.0,)
    seed: int = 0

    def polytope(self) -> DisturbancePolytope:
        return DisturbancePolytope.box(self.lo, self.hi)


@dataclass(frozen=True)
class ScenarioConfig:
    vehicles: tuple
    t0: float = 0.0
    dt: float = 0.1
    lane_width: float = 3.5
    wheelbase: float = 2.5
    margin: float = 2.0
    t_end: Optional[float] = None
    robust: bool = True
    disturbance: DisturbanceSpec = DisturbanceSpec()
    safety: SafetyParams = SafetyParams()
    fxt: FxTParams = FxTParams()
    gains: ConstraintGains = ConstraintGains()
    weights: QpWeights = QpWeights()

    def __post_init__(self):
        object.__setattr__(self, "vehicles", tuple(self.vehicles))
        self.validate()

    def validate(self) -> None:
        if not self.dt > 0:
            raise ScenarioError("dt", "must be positive")
        if not self.lane_width > 0:
            raise ScenarioError("lane_width", "must be positive")
        if self.margin < 0:
            raise ScenarioError("margin", "must be nonnegative")
        d = self.disturbance
        if d.policy not in POLICIES:
            raise ScenarioError("disturbance.policy", f"must be one of {POLICIES}")
        if not (len(d.channels) == len(d.lo) == len(d.hi)):
            raise ScenarioError("disturbance", "channels, lo and hi must have equal length")
        if any(lo > 0 or hi < 0 for lo, hi in zip(d.lo, d.hi)):
            raise ScenarioError("disturbance", "box must contain the zero disturbance")
        if not 0 <= d.seed < 2 ** 64:
            raise ScenarioError("disturbance.seed", "must be a 64-bit unsigned integer")
        ids = [v.id for v in self.vehicles]
        seen = set()
        for v in self.vehicles:
            key = f"vehicle {v.id!r}"
            if v.id in seen:
                raise ScenarioError(key, "duplicate id")
            seen.add(v.id)
            if v.role not in ROLES:
                raise ScenarioError(f"{key}.role", f"must be one of {ROLES}")
            if v.lane not in range(N_LANES):
                raise ScenarioError(f"{key}.lane", f"must be in 0..{N_LANES - 1}")
            if not all(math.isfinite(q) for q in v.state) or v.state.v < 0:
                raise ScenarioError(f"{key}.state", "must be finite with v >= 0")
            if v.is_cav:
                if v.terminal is None:
                    raise ScenarioError(f"{key}.terminal", "required for a CAV")
                if not v.terminal.tf_star > self.t0:
                    raise ScenarioError(f"{key}.terminal.tf_star", "must exceed t0")
            elif v.terminal is not None:
                raise ScenarioError(f"{key}.terminal", "the uncooperative vehicle has no terminal state")
            if v.role == "C":
                if v.target_lane is None or v.target_lane not in range(N_LANES) or v.target_lane == v.lane:
                    raise ScenarioError(f"{key}.target_lane", "must name the other lane")
            elif v.target_lane is not None:
                raise ScenarioError(f"{key}.target_lane", "only C changes lanes")
            if v.adjacent is not None:
                if v.role not in ("C", "i_m"):
                    raise ScenarioError(f"{key}.adjacent", "only C and i_m carry a merging constraint")
                if v.adjacent not in ids or v.adjacent == v.id:
                    raise ScenarioError(f"{key}.adjacent", f"unknown vehicle {v.adjacent!r}")
            elif v.role == "i_m":
                raise ScenarioError(f"{key}.adjacent", "required for i_m")
            if v.role == "U":
                times = [k[0] for k in v.profile]
                if any(b <= a for a, b in zip(times, times[1:])):
                    raise ScenarioError(f"{key}.profile", "knot times must increase")
                if any(k[1] < 0 for k in v.profile):
                    raise ScenarioError(f"{key}.profile", "speeds must be nonnegative")
            elif v.profile:
                raise ScenarioError(f"{key}.profile", "only the uncooperative vehicle follows a profile")
        if sum(v.role == "C" for v in self.vehicles) > 1:
            raise ScenarioError("vehicles", "at most one lane-changing vehicle C")
        if self.t_end is None and not any(v.is_cav for v in self.vehicles):
            raise ScenarioError("t_end", "required when there are no CAVs")
        if self.t_end is not None and not self.t_end > self.t0:
            raise ScenarioError("t_end", "must exceed t0")

    def vehicle(self, vid: str) -> VehicleSpec:
        for v in self.vehicles:
            if v.id == vid:
                return v
        raise KeyError(vid)

    @property
    def cavs(self) -> list:
        return [v for v in self.vehicles if v.is_cav]

    @property
    def lane_changer(self) -> Optional[VehicleSpec]:
        return next((v for v in self.vehicles if v.role == "C"), None)

    @property
    def n_steps(self) -> int:
        if self.t_end is not None:
            end = self.t_end
        else:
            end = max(v.terminal.tf_star for v in self.cavs) + self.margin
        return int(math.ceil((end - self.t0) / self.dt - 1e-9))

    def time(self, k: int) -> float:
        return self.t0 + k * self.dt

    def boundary(self, v: VehicleSpec) -> BoundarySpec:
        return BoundarySpec(self.t0, v.terminal.tf_star, v.state.x, v.state.v, v.terminal.x, v.terminal.v)


def profile_speed(profile, t: float, default: float) -> float:
    if not profile:
        return default
    ts = [k[0] for k in profile]
    vs = [k[1] for k in profile]
    return float(np.interp(t, ts, vs))


# --------------------------------------------------------------------------- logging types


class StepRecord(NamedTuple):
    time: float
    id: str
    state: VehicleState
    control: ControlInput
    t_ref: Optional[float]
    v_ref: Optional[float]
    u_ref: Optional[float]
    y_des: Optional[float]
    h: cs.CbfValues
    V_xf: Optional[float]
    phi_m: Optional[float]
    qp_status: str
    w: tuple


@dataclass(frozen=True)
class SimLog:
    config: ScenarioConfig
    records: tuple
    t_lateral: Optional[float] = None
    error: Optional[str] = None
    problems: tuple = ()

    def times(self) -> list:
        return sorted({r.time for r in self.records})

    def of(self, vid: str) -> list:
        return [r for r in self.records if r.id == vid]


@dataclass(frozen=True)
class SafetyReport:
    min_h: dict
    terminal_error: dict
    energy: dict
    qp_failures: int
    failures_by_id: dict
    t_lateral: Optional[float]

    def as_dict(self) -> dict:
        return {
            "min_h": self.min_h,
            "terminal_error": self.terminal_error,
            "energy": self.energy,
            "qp_failures": self.qp_failures,
            "failures_by_id": self.failures_by_id,
            "t_lateral": self.t_lateral,
        }


# --------------------------------------------------------------------------- world and controller


@dataclass
class World:
    """Mutable per-step snapshot shared by the controller calls of one step."""

    config: ScenarioConfig
    time: float
    states: dict
    trajectories: dict
    lateral: bool = False
    planned: dict = field(default_factory=dict)
    model: VehicleModel = None
    W: DisturbancePolytope = None

    def __post_init__(self):
        if self.model is None:
            self.model = VehicleModel(self.config.wheelbase, self.config.disturbance.channels)
        if self.W is None:
            self.W = self.config.disturbance.polytope()

    def lanes(self, vid: str) -> set:
        spec = self.config.vehicle(vid)
        if spec.role == "C" and self.lateral:
            return {spec.lane, spec.target_lane}
        return {spec.lane}

    def preceding(self, vid: str) -> Optional[str]:
        me = self.states[vid]
        mine = self.lanes(vid)
        best = None
        for other, s in self.states.items():
            if other == vid or s.x <= me.x or not (self.lanes(other) & mine):
                continue
            if best is None or s.x < self.states[best].x:
                best = other
        return best

    def in_lane(self, lane: int, exclude: str) -> list:
        return [k for k in self.states if k != exclude and lane in self.lanes(k)]


class ControllerOutput(NamedTuple):
    control: ControlInput
    status: str
    t_ref: float
    v_ref: float
    u_ref: float
    y_des: float
    h: cs.CbfValues
    V_xf: float
    phi_m: Optional[float]
    barriers: list
    problem: object


def merging_geometry(cfg: ScenarioConfig, spec: VehicleSpec) -> MergingGeometry:
    c = cfg.lane_changer
    adj = cfg.vehicle(spec.adjacent)
    x_cf = (c.terminal.x if c is not None else spec.terminal.x)
    return MergingGeometry.from_positions(x_cf, spec.state.x, adj.state.x, spec.state.v,
                                          cfg.safety.phi_rt, cfg.safety.eps)


def _box_min(W: DisturbancePolytope, coeff: np.ndarray) -> float:
    lo, hi = W.box_bounds()
    return float(np.sum(np.minimum(coeff * lo, coeff * hi)))


def _box_absmax(W: DisturbancePolytope, coeff: np.ndarray) -> float:
    lo, hi = W.box_bounds()
    return float(np.sum(np.maximum(np.abs(coeff * lo), np.abs(coeff * hi))))


def ego_bounds(world: World) -> MotionBounds:
    sp = world.config.safety
    d = world.model.d
    return MotionBounds(max(abs(sp.u_min), abs(sp.u_max)) + _box_absmax(world.W, d[3]),
                        max(abs(sp.phi_min), abs(sp.phi_max)))


def neighbor_terms(world: World, vid: str) -> tuple[float, NeighborMotion]:
    """Lower bounds on a neighbour's speed and acceleration along x, plus its jerk bound."""
    cfg = world.config
    s = world.states[vid]
    spec = cfg.vehicle(vid)
    c, sn = math.cos(s.theta), math.sin(s.theta)
    l = cfg.wheelbase
    if spec.role == "U":
        u, phi = world.planned[vid]
        rate = s.v * c
        a_lo = c * u
        jerk = cs.x_jerk_bound(s, MotionBounds(abs(u), 0.0), l, cfg.dt)
        return rate, NeighborMotion(a_lo, jerk)
    d = world.model.d
    rate = s.v * c + _box_min(world.W, d[0])
    if vid in world.planned:
        u, phi = world.planned[vid]
        a_lo = c * u + _box_min(world.W, c * d[3]) - s.v * s.v * sn * phi / l
        b = MotionBounds(abs(u) + _box_absmax(world.W, d[3]), abs(phi))
    else:
        sp = cfg.safety
        b = ego_bounds(world)
        a_lo = (min(c * sp.u_min, c * sp.u_max) + _box_min(world.W, c * d[3])
                - s.v * s.v * abs(sn) * b.phi_abs / l)
    return rate, NeighborMotion(a_lo, cs.x_jerk_bound(s, b, l, cfg.dt))


def reference(traj: CubicTrajectory, x: float, hold: float = 0.0):
    """Reference at the observed position; past the terminal position the speed is held with no feedforward.

    With ``hold > 0`` the feedforward is the cubic's control averaged over the
    next ``hold`` seconds, which for a control linear in time is its value at
    the midpoint. Holding ``u*(t_ref)`` instead drifts by ``a hold^2 / 2`` of
    speed per step.
    """
    r = map_position(traj, x)
    if r.clamped and r.t_ref >= traj.tf:
        return r.t_ref, r.v_ref, 0.0
    if hold > 0.0:
        return r.t_ref, r.v_ref, traj.control(min(r.t_ref + 0.5 * hold, traj.tf))
    return r.t_ref, r.v_ref, r.u_ref


def controller_step_full(world: World, vid: str) -> ControllerOutput:
    cfg = world.config
    spec = cfg.vehicle(vid)
    if not spec.is_cav:
        raise ValueError(f"vehicle {vid!r} is not a CAV")
    s = world.states[vid]
    traj = world.trajectories[vid]
    t = world.time
    sp = cfg.safety
    W = world.W if cfg.robust else None
    dyn = world.model.affine_at(s)

    t_ref, v_ref, u_ref = reference(traj, s.x, cfg.dt)
    lane = spec.target_lane if (spec.role == "C" and world.lateral) else spec.lane
    y_des = lane * cfg.lane_width

    prec = world.preceding(vid)
    adj = None
    geom = None
    progress = 0.0
    if spec.adjacent is not None and t <= spec.terminal.tf_star + 1e-9:
        adj = spec.adjacent
        geom = merging_geometry(cfg, spec)
        progress = s.x - spec.state.x
    nb = Neighbors(world.states[prec].x if prec else None, world.states[adj].x if adj else None)
    motions = {}
    rates = [None, None]
    if prec:
        rates[0], motions["xp"] = neighbor_terms(world, prec)
    if adj:
        rates[1], motions["m"] = neighbor_terms(world, adj)
    bars = cs.barriers(s, nb, geom, sp, progress, Neighbors(*rates))
    eb = ego_bounds(world)
    bars = [cs.sampled_data_correction(b, s, dyn, cfg.wheelbase, cfg.dt, eb, motions.get(b.kind))
            for b in bars]

    block = cs.build_fxt_row(s, spec.terminal.x, cfg.fxt, dyn, W, t, spec.terminal.tf_star)
    block.extend(cs.build_soft_rows(s, v_ref, y_des, cfg.gains, dyn, W))
    block.extend(cs.build_cbf_rows(bars, dyn, W, cfg.gains))
    gains = cfg.gains
    if gains.delta_max > 1.0 / cfg.dt:
        # (1 - delta dt) h must stay nonnegative between samples
        block.bounds.update({cs.delta_id(b.kind): (0.0, 1.0 / cfg.dt) for b in bars})
    problem = assemble(block, u_ref, sp, gains, cfg.weights)
    sol = solve(problem)
    if sol.status == "optimal":
        control = ControlInput(u_ref + sol[DU], sol[cs.PHI])
    else:
        control = ControlInput(sp.u_min, 0.0)
    h = cs.cbf_values(s, nb, geom, sp, progress)
    phi_m = cs.phi_reaction(geom, progress) if geom is not None else None
    V = cs.goal_clf(s, spec.terminal.x, cfg.fxt.p1)
    return ControllerOutput(control, sol.status, t_ref, v_ref, u_ref, y_des, h, V, phi_m, bars, problem)


def controller_step(world: World, vid: str) -> ControlInput:
    return controller_step_full(world, vid).control


def lateral_trigger(world: World) -> bool:
    """Latch the lateral manoeuvre once both clearances around the target gap are nonnegative.

    The gap is open when the merging barrier of C is nonnegative, the nearest
    target-lane vehicle behind C would satisfy its headway barrier with C
    inserted ahead of it, and C would satisfy its own headway barrier with
    respect to the nearest target-lane vehicle ahead.
    """
    if world.lateral:
        return True
    cfg = world.config
    c = cfg.lane_changer
    if c is None:
        return False
    sp = cfg.safety
    sc = world.states[c.id]
    if c.adjacent is not None:
        geom = merging_geometry(cfg, c)
        h_m = cs.cbf_values(sc, Neighbors(None, world.states[c.adjacent].x), geom, sp,
                            sc.x - c.state.x).h_m
        if h_m < 0.0:
            return False
    target = world.in_lane(c.target_lane, c.id)
    behind = [k for k in target if world.states[k].x <= sc.x]
    ahead = [k for k in target if world.states[k].x > sc.x]
    if behind:
        f = max(behind, key=lambda k: world.states[k].x)
        fs = world.states[f]
        if sc.x - fs.x - sp.phi_rt * fs.v - sp.eps < 0.0:
            return False
    if ahead:
        lead = min(ahead, key=lambda k: world.states[k].x)
        if world.states[lead].x - sc.x - sp.phi_rt * sc.v - sp.eps < 0.0:
            return False
    world.lateral = True
    return True


# --------------------------------------------------------------------------- run loop


def _u_control(cfg: ScenarioConfig, spec: VehicleSpec, s: VehicleState, t: float) -> ControlInput:
    """Acceleration that moves U onto its speed profile over the next step."""
    target = profile_speed(spec.profile, t + cfg.dt, spec.state.v)
    u = (target - s.v) / cfg.dt
    return ControlInput(min(max(u, cfg.safety.u_min), cfg.safety.u_max), 0.0)


def _realize(world: World, vid: str, out: Optional[ControllerOutput], rng) -> np.ndarray:
    d = world.config.disturbance
    m = world.model.disturbance_dim
    if d.policy == "zero" or out is None:
        return np.zeros(m)
    lo, hi = world.W.box_bounds()
    if d.policy == "random":
        return rng.uniform(lo, hi)
    # worst corner against the headway barrier, else against the tightest one
    bars = out.barriers
    target = next((b for b in bars if b.kind == "xp"), None) or min(bars, key=lambda b: b.value)
    coeff = target.grad @ world.model.d
    V = world.W.vertices()
    return V[int(np.argmin(V @ coeff))]


def initial_world(cfg: ScenarioConfig) -> World:
    trajs = {v.id: solve_unconstrained(cfg.boundary(v)) for v in cfg.cavs}
    states = {v.id: v.state for v in cfg.vehicles}
    return World(cfg, cfg.t0, states, trajs)


def run(cfg: ScenarioConfig, keep_problems: bool = False) -> SimLog:
    world = initial_world(cfg)
    rng = np.random.default_rng(cfg.disturbance.seed)
    records = []
    problems = []
    t_lateral = None
    order_u = [v.id for v in cfg.vehicles if not v.is_cav]
    error = None
    for k in range(cfg.n_steps + 1):
        t = cfg.time(k)
        world.time = t
        world.planned = {}
        if lateral_trigger(world) and t_lateral is None:
            t_lateral = t
        outputs = {}
        for vid in order_u:
            world.planned[vid] = _u_control(cfg, cfg.vehicle(vid), world.states[vid], t)
        cav_order = sorted((v.id for v in cfg.cavs), key=lambda i: (-world.states[i].x, i))
        try:
            for vid in cav_order:
                out = controller_step_full(world, vid)
                outputs[vid] = out
                world.planned[vid] = out.control
                if keep_problems:
                    problems.append((t, vid, out.problem))
        except Exception as exc:  # abort with the partial log
            error = f"{type(exc).__name__}: {exc}"
            break
        ws = {}
        for vid in sorted(outputs):
            ws[vid] = _realize(world, vid, outputs[vid], rng)
        for v in cfg.vehicles:
            vid = v.id
            s = world.states[vid]
            w = ws.get(vid, np.zeros(world.model.disturbance_dim))
            out = outputs.get(vid)
            if out is None:
                h = cs.CbfValues(None, None, s.v - cfg.safety.v_min, cfg.safety.v_max - s.v)
                records.append(StepRecord(t, vid, s, world.planned[vid], None, None, None, None,
                                          h, None, None, "exogenous", tuple(float(q) for q in w)))
            else:
                records.append(StepRecord(t, vid, s, out.control, out.t_ref, out.v_ref, out.u_ref, out.y_des,
                                          out.h, out.V_xf, out.phi_m, out.status, tuple(float(q) for q in w)))
        if k == cfg.n_steps:
            break
        try:
            new = {}
            for v in cfg.vehicles:
                vid = v.id
                w = ws.get(vid) if v.is_cav else None
                new[vid] = world.model.step(world.states[vid], world.planned[vid], w, cfg.dt)
            world.states = new
        except Exception as exc:
            error = f"{type(exc).__name__}: {exc}"
            break
    return SimLog(cfg, tuple(records), t_lateral, error, tuple(problems))


# --------------------------------------------------------------------------- audit


def trapezoid_energy(times, controls) -> float:
    total = 0.0
    for k in range(1, len(times)):
        total += 0.25 * (controls[k - 1] ** 2 + controls[k] ** 2) * (times[k] - times[k - 1])
    return total


def audit(log: SimLog) -> SafetyReport:
    cfg = log.config
    min_h, term, energy, by_id = {}, {}, {}, {}
    failures = 0
    for v in cfg.cavs:
        recs = log.of(v.id)
        mins = {}
        for kind, idx in zip(cs.CBF_KINDS, range(4)):
            vals = [r.h[idx] for r in recs if r.h[idx] is not None]
            if vals:
                mins[kind] = min(vals)
        min_h[v.id] = mins
        n_fail = sum(r.qp_status != "optimal" for r in recs)
        by_id[v.id] = n_fail
        failures += n_fail
        tf = v.terminal.tf_star
        window = [r for r in recs if r.time <= tf + 1e-9]
        if recs:
            # states at tf_star, linearly interpolated when it falls between grid points
            ts = [r.time for r in recs]
            x = float(np.interp(tf, ts, [r.state.x for r in recs]))
            vv = float(np.interp(tf, ts, [r.state.v for r in recs]))
            term[v.id] = {"x": abs(x - v.terminal.x), "v": abs(vv - v.terminal.v)}
        energy[v.id] = trapezoid_energy([r.time for r in window], [r.control.u for r in window])
    return SafetyReport(min_h, term, energy, failures, by_id, log.t_lateral)
