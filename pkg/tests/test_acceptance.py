"""Exit criteria of the build: one test per criterion, each printing a PASS/FAIL line."""

import dataclasses as dc
import math
import time

import numpy as np
import pytest
import sympy as sp

from fxtocbf import cli
from fxtocbf import constraints as cs
from fxtocbf.config import load_scenario
from fxtocbf.constraints import FxTParams, MergingGeometry, Neighbors, SafetyParams
from fxtocbf.dynamics import DisturbancePolytope, VehicleState
from fxtocbf.ocp import BoundarySpec, energy_cost, evaluate, solve_unconstrained
from fxtocbf.qp import dense_kkt_residuals, enumerate_active_sets, lp_box_inf_oracle, lp_box_sup_oracle, solve_dense_qp
from fxtocbf.simulator import audit, initial_world, run

from conftest import GOLDEN, SCENARIOS
from qp_cases import random_qp
from ref_oracles import central_fd, dual_value_via_qp, transcription_cost

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(n, title, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPT {n} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
        assert ok, detail
    return emit


def test_1_ocp_correctness(report):
    rng = np.random.default_rng(1)
    t_start = time.perf_counter()
    worst_bc, worst_gap, beaten = 0.0, -math.inf, 0
    for _ in range(1000):
        t0, T = rng.uniform(-100, 1000), rng.uniform(0.5, 30)
        x0, v0 = rng.uniform(-500, 500), rng.uniform(0, 35)
        bc = BoundarySpec(t0, t0 + T, x0, v0, x0 + rng.uniform(0, 600), rng.uniform(0, 35))
        tr = solve_unconstrained(bc)
        for t, x, v in ((bc.t0, bc.x0, bc.v0), (bc.tf, bc.xf, bc.vf)):
            p = evaluate(tr, t)
            worst_bc = max(worst_bc, abs(p.x - x) / max(1.0, abs(x)), abs(p.v - v) / max(1.0, abs(v)))
        J, J_dt = energy_cost(tr), transcription_cost(bc, knots=50)
        # closed form must win or tie, and the oracle must be within 1 %
        worst_gap = max(worst_gap, (J - J_dt) / max(J_dt, 1e-12))
        beaten += J_dt > J * 1.01 + 1e-9
    elapsed = time.perf_counter() - t_start
    ok = worst_bc <= 1e-9 and worst_gap <= 1e-9 and beaten == 0 and elapsed < 5.0
    report(1, "OCP correctness", ok,
           f"boundary err {worst_bc:.2e}, worst (J-J_dt)/J_dt {worst_gap:.2e}, "
           f"oracle >1% worse {beaten}, {elapsed:.2f}s")


def test_2_dual_lp_equivalence(report):
    rng = np.random.default_rng(2)
    t_start = time.perf_counter()
    worst = 0.0
    for _ in range(500):
        n = int(rng.integers(1, 5))
        # boxes must contain w = 0
        W = DisturbancePolytope.box(-rng.uniform(0, 2, n), rng.uniform(0, 2, n))
        c = rng.normal(size=n) * rng.choice([0.1, 1, 10])
        worst = max(worst,
                    abs(dual_value_via_qp("sup", c, W) - lp_box_sup_oracle(c, W)),
                    abs(dual_value_via_qp("inf", c, W) - lp_box_inf_oracle(c, W)))
    elapsed = time.perf_counter() - t_start
    report(2, "dual-LP equivalence", worst <= 1e-8 and elapsed < 10.0,
           f"max |b'lam - vertex| {worst:.2e}, {elapsed:.2f}s")


def test_3_qp_soundness(report):
    rng = np.random.default_rng(3)
    t_start = time.perf_counter()
    worst_f, worst_kkt, optimal, mismatched = 0.0, 0.0, 0, 0
    for _ in range(200):
        qp = random_qp(rng, n_max=5, m_max=5)
        x_ref, f_ref = enumerate_active_sets(qp)
        s = solve_dense_qp(qp)
        if x_ref is None or s.status != "optimal":
            mismatched += (x_ref is None) != (s.status == "infeasible")
            continue
        optimal += 1
        worst_f = max(worst_f, abs(s.objective - f_ref) / max(1.0, abs(f_ref)))
        worst_kkt = max(worst_kkt, dense_kkt_residuals(qp, s.x, s.multipliers).max)
    elapsed = time.perf_counter() - t_start
    ok = optimal == 200 and mismatched == 0 and worst_f <= 1e-7 and worst_kkt <= 1e-6 and elapsed < 30.0
    report(3, "QP solver soundness", ok,
           f"{optimal}/200 optimal, objective err {worst_f:.2e}, KKT {worst_kkt:.2e}, {elapsed:.2f}s")


def test_4_gradient_checks(report):
    rng = np.random.default_rng(4)
    p = SafetyParams()
    worst = 0.0

    def rel(a, fd):
        return float(np.max(np.abs(a - fd)) / max(1.0, np.max(np.abs(a))))

    for _ in range(200):
        s = VehicleState(rng.uniform(-200, 200), rng.uniform(-5, 5), rng.uniform(-0.5, 0.5), rng.uniform(0, 35))
        xf, p1 = rng.uniform(-200, 200), rng.uniform(0.1, 5)
        vr, yd = rng.uniform(0, 35), rng.uniform(-4, 4)
        worst = max(worst, rel(cs.goal_clf_grad(s, xf, p1), central_fd(lambda q: cs.goal_clf(q, xf, p1), s)))
        grads = cs.soft_clf_grads(s, vr, yd)
        for k in range(3):
            worst = max(worst, rel(grads[k], central_fd(lambda q: cs.soft_clf_values(q, vr, yd)[k], s)))
        L_i = rng.uniform(50, 300)
        g = MergingGeometry(L_i, L_i - rng.uniform(-20, 20), rng.uniform(5, 30), p.phi_rt, p.eps)
        x0 = s.x - rng.uniform(0, L_i)
        gap = rng.uniform(-50, 50)
        nb = Neighbors(s.x + gap, s.x + gap)
        for idx, kind in ((0, "xp"), (1, "m")):
            fd = central_fd(lambda q: cs.cbf_values(q, nb, g, p, q.x - x0)[idx], s)
            worst = max(worst, rel(cs.barrier_grad(kind, s, p, g, s.x - x0), fd))
    report(4, "gradient checks", worst <= 1e-5, f"max relative err {worst:.2e} over 200 states")


def test_5_fixed_time_convergence(report):
    cfg = load_scenario(SCENARIOS / "single_cav.json")
    b = cfg.vehicles[0]
    assert (cfg.t0, b.terminal.tf_star, b.state.x, b.terminal.x, b.state.v, b.terminal.v, cfg.dt) == \
        (0.0, 10.0, 0.0, 250.0, 20.0, 25.0, 0.1)
    assert cfg.disturbance.policy == "zero"
    t_start = time.perf_counter()
    log = run(cfg)
    elapsed = time.perf_counter() - t_start
    rep = audit(log)
    J_ref = energy_cost(initial_world(cfg).trajectories[b.id])
    ex, ev = rep.terminal_error[b.id]["x"], rep.terminal_error[b.id]["v"]
    dJ = abs(rep.energy[b.id] - J_ref) / J_ref
    ok = ex <= 0.5 and ev <= 0.2 and dJ <= 0.02 and rep.qp_failures == 0 and elapsed < 1.0
    report(5, "fixed-time convergence", ok,
           f"|dx| {ex:.3g} m, |dv| {ev:.3g} m/s, energy {rep.energy[b.id]:.4g} vs {J_ref:.4g} "
           f"({100 * dJ:.2f}%), {elapsed:.2f}s")


def test_6_safety_under_disturbance(report):
    base = load_scenario(SCENARIOS / "lane_change_3.json")
    d = base.disturbance
    assert d.channels == ("v",) and d.lo == (-0.5,) and d.hi == (0.5,) and d.policy == "random"
    cavs = {v.id for v in base.cavs}
    merging = {v.id for v in base.cavs if v.role in ("C", "i_m")}
    t_start = time.perf_counter()
    worst = {"xp": math.inf, "m": math.inf, "vmin": math.inf, "vmax": math.inf}
    worst_m0, failures, errors = 0.0, 0, 0
    for seed in range(100):
        log = run(dc.replace(base, disturbance=dc.replace(d, seed=seed)))
        errors += log.error is not None
        for r in log.records:
            if r.id not in cavs:
                continue
            if r.qp_status != "optimal":
                failures += 1
                continue
            for k, kind in zip(range(4), cs.CBF_KINDS):
                h = r.h[k]
                if h is None or (kind == "m" and r.id not in merging):
                    continue
                worst[kind] = min(worst[kind], h)
        for vid in merging:
            worst_m0 = max(worst_m0, abs(log.of(vid)[0].h.h_m))
    elapsed = time.perf_counter() - t_start
    ok = min(worst.values()) >= -1e-6 and worst_m0 <= 1e-9 and errors == 0 and elapsed < 60.0
    report(6, "safety invariance under disturbance", ok,
           "min h " + ", ".join(f"{k} {v:.3g}" for k, v in worst.items())
           + f", |h_m(t0)| {worst_m0:.1e}, non-optimal steps {failures}, {elapsed:.1f}s")


def test_7_fxt_gain_schedule(report):
    mu, T = sp.symbols("mu T", positive=True)
    alpha = mu * sp.pi / (2 * T)
    g1, g2 = 1 + 1 / mu, 1 - 1 / mu
    rng = np.random.default_rng(7)
    worst, floors = 0.0, 0
    for k in range(50):
        m = float(rng.uniform(1.1, 20))
        T_min = float(rng.uniform(0.05, 2))
        tf = 10.0
        # every fifth pair sits past tf - T_min so the floor branch is taken
        t = float(tf - rng.uniform(0, 0.9) * T_min) if k % 5 == 0 else float(rng.uniform(0, tf - T_min))
        T_ud = max(T_min, tf - t)
        floors += T_ud == T_min
        g = cs.fxt_gains(FxTParams(mu=m, T_min=T_min), t, tf)
        sub = {mu: sp.Float(m, 30), T: sp.Float(T_ud, 30)}
        exact = [float(e.subs(sub).evalf(30)) for e in (alpha, alpha, g1, g2)]
        assert g.T_ud == T_ud
        for got, want in zip(g[:4], exact):
            worst = max(worst, abs(got - want) / abs(want))
    report(7, "FxT gain schedule", worst <= 4 * np.finfo(float).eps and floors >= 10,
           f"max relative err {worst:.1e} (float rounding), floor branch {floors}/50")


def test_8_determinism_golden(report, tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert cli.main(["run", "--scenario", str(SCENARIOS / "single_cav.json"), "--out", str(out)]) == 0
        outs.append((out / cli.TIMESERIES).read_bytes())
    golden = (GOLDEN / "single_cav_timeseries.csv").read_bytes()
    report(8, "determinism golden", outs[0] == outs[1] == golden,
           f"{len(outs[0])} bytes, runs identical {outs[0] == outs[1]}, golden identical {outs[0] == golden}")
