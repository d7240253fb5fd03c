import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fxtocbf import constraints as cs
from fxtocbf.constraints import ConstraintGains, ConstraintRow, FxTParams, Neighbors, SafetyParams
from fxtocbf.dynamics import DisturbancePolytope, VehicleModel, VehicleState
from fxtocbf.qp import (
    CORE_VARS, DU, KERNELS, AssemblyError, DenseQP, QpProblem,
    UnsupportedOracleError, assemble, dense_kkt_residuals, enumerate_active_sets, format_problem,
    kkt_residuals, lp_box_sup_oracle, solve, solve_dense_qp,
)

from qp_cases import random_qp


def one_var(rows, F=0.0):
    return QpProblem(["u"], [-math.inf], [math.inf], [[1.0]], [F], rows)


def test_single_active_row():
    p = one_var([ConstraintRow({"u": 1.0}, 1.0, cs.GE, "r")])
    s = solve(p)
    assert s.status == "optimal" and s["u"] == pytest.approx(1.0, abs=1e-12)
    assert s.multipliers.ineq[0] == pytest.approx(1.0, abs=1e-12)
    r = kkt_residuals(p, s)
    assert r.max <= 1e-9


def test_infeasible_pair():
    p = one_var([ConstraintRow({"u": 1.0}, 1.0, cs.GE, "a"), ConstraintRow({"u": 1.0}, 0.0, cs.LE, "b")])
    assert solve(p).status == "infeasible"


def test_unconstrained_shift():
    s = solve(one_var([], F=-2.0))
    assert s["u"] == pytest.approx(2.0) and s.status == "optimal"


def test_kkt_perturbation_and_zero_problem():
    p = one_var([ConstraintRow({"u": 1.0}, 1.0, cs.GE, "r")])
    s = solve(p)
    moved = s.with_values(u=s["u"] + 0.1)
    moved = type(moved)(moved.values, moved.objective, moved.status, moved.iterations, None, s.multipliers)
    assert kkt_residuals(p, moved).stationarity == pytest.approx(0.1, abs=1e-12)
    z = QpProblem(["u"], [-math.inf], [math.inf], [[1.0]], [0.0], [])
    assert kkt_residuals(z, solve(z)).max == 0.0


def test_max_iter_status():
    n = 6
    # free minimiser at 0, every bound row x_i >= 1 must enter
    qp = DenseQP.build(np.eye(n), np.zeros(n), A_in=-np.eye(n), b_in=-np.ones(n))
    s = solve_dense_qp(qp)
    assert s.status == "optimal" and s.iterations == n
    for kernel in KERNELS:
        assert solve_dense_qp(qp, kernel, max_iter=3).status == "max-iter"


def test_rejects_indefinite():
    with pytest.raises(np.linalg.LinAlgError):
        solve_dense_qp(DenseQP.build(np.zeros((1, 1)), [1.0]))


def test_lp_box_oracle():
    W = DisturbancePolytope.box([-1, -1], [1, 1])
    assert lp_box_sup_oracle([2, -3], W) == 5
    assert lp_box_sup_oracle([0, 0], W) == 0
    assert lp_box_sup_oracle([4, -7, 1], DisturbancePolytope.zero(3)) == 0
    with pytest.raises(UnsupportedOracleError):
        lp_box_sup_oracle([1, 1], DisturbancePolytope([[1, 1], [-1, 0], [0, -1]], [1, 1, 1]))


def test_three_variable_two_active():
    rng = np.random.default_rng(11)
    Q = np.diag([1.0, 2.0, 3.0])
    A = rng.normal(size=(2, 3))
    x_free = np.array([1.0, -1.0, 0.5])
    # both rows violated by the free minimiser
    b = A @ x_free - 1.0
    qp = DenseQP.build(Q, -Q @ x_free, A_in=A, b_in=b)
    x, f = enumerate_active_sets(qp)
    s = solve_dense_qp(qp)
    assert s.objective == pytest.approx(f, rel=1e-9, abs=1e-7)
    assert np.all(s.multipliers.ineq > 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_matches_enumeration(seed):
    qp = random_qp(np.random.default_rng(seed)); x, f = enumerate_active_sets(qp)
    for kernel in KERNELS:
        s = solve_dense_qp(qp, kernel)
        assert s.status == "optimal"
        assert s.objective == pytest.approx(f, rel=1e-9, abs=1e-7)
        assert dense_kkt_residuals(qp, s.x, s.multipliers).max <= 1e-6


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_infeasible_detected(seed):
    qp = random_qp(np.random.default_rng(seed), feasible=False)
    x, f = enumerate_active_sets(qp)
    for kernel in KERNELS:
        s = solve_dense_qp(qp, kernel)
        if x is None:
            assert s.status == "infeasible"
        else:
            assert s.status == "optimal" and s.objective == pytest.approx(f, rel=1e-9, abs=1e-7)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_kernels_agree(seed):
    qp = random_qp(np.random.default_rng(seed), n_max=10, m_max=12)
    sols = [solve_dense_qp(qp, k) for k in sorted(KERNELS)]
    for s in sols[1:]:
        assert s.status == sols[0].status
        if s.status == "optimal":
            np.testing.assert_allclose(s.x, sols[0].x, atol=1e-9)


def test_deterministic():
    qp = random_qp(np.random.default_rng(5), n_max=6, m_max=6)
    a, b = solve_dense_qp(qp), solve_dense_qp(qp)
    assert a.x.tobytes() == b.x.tobytes()
    assert a.multipliers.ineq.tobytes() == b.multipliers.ineq.tobytes()


def test_compiled_kernel_present():
    assert "compiled" in KERNELS


# ------------------------------------------------------------------ assembly


def _controller_block(state, x_f, v_ref, y_des, W, safety=SafetyParams()):
    dyn = VehicleModel().affine_at(state)
    gains = ConstraintGains()
    blk = cs.build_fxt_row(state, x_f, FxTParams(), dyn, W, 0.0, 10.0)
    blk.extend(cs.build_soft_rows(state, v_ref, y_des, gains, dyn, W))
    blk.extend(cs.build_cbf_rows(cs.barriers(state, Neighbors(), None, safety), dyn, W, gains))
    return blk, gains


def test_assemble_at_goal_is_exact_tracking():
    safety = SafetyParams(v_min=0.0)
    s = VehicleState(100.0, 3.5, 0.0, 0.0)
    blk, gains = _controller_block(s, 100.0, 0.0, 3.5, None, safety)
    p = assemble(blk, 0.0, safety, gains)
    sol = solve(p)
    assert sol.status == "optimal"
    assert abs(sol[DU]) <= 1e-9 and abs(sol[cs.PHI]) <= 1e-9
    for g in cs.CLF_GOALS:
        assert abs(sol[cs.slack_id(g)]) <= 1e-9


def test_assemble_layout_and_bounds():
    s = VehicleState(10.0, 0.0, 0.0, 20.0)
    W = DisturbancePolytope.box([-0.5], [0.5])
    blk, gains = _controller_block(s, 200.0, 20.0, 0.0, W)
    sp = SafetyParams()
    p = assemble(blk, 1.5, sp, gains)
    assert tuple(p.var_ids[:len(CORE_VARS)]) == CORE_VARS
    duals = p.var_ids[len(CORE_VARS):]
    assert "lam_xf[0]" in duals and "mu_vmin[1]" in duals and "lam_ydes[0]" in duals
    i = p.index(DU)
    assert (p.lower[i], p.upper[i]) == (sp.u_min - 1.5, sp.u_max - 1.5)
    for k in duals:
        j = p.index(k)
        assert p.Q[j, j] == 1e-8 and p.F[j] == 0.0
        assert (p.lower[j], p.upper[j]) == ((0.0, math.inf) if k.startswith("lam") else (-math.inf, 0.0))
    for kind in cs.CBF_KINDS:
        j = p.index(cs.delta_id(kind))
        assert (p.lower[j], p.upper[j]) == (0.0, gains.delta_max)
    assert np.array_equal(p.Q, p.Q.T)
    # the u-coefficient moves u_ref into the rhs
    vmax_in = next(r for r in blk.rows if r.tag == "cbf_vmax")
    vmax_out = next(r for r in p.rows if r.tag == "cbf_vmax")
    assert vmax_out.coeffs[DU] == -1.0 and vmax_out.rhs == vmax_in.rhs + 1.5


def test_assemble_errors():
    sp, g = SafetyParams(), ConstraintGains()
    bad = cs.RowBlock([ConstraintRow({"ghost": 1.0}, 0.0, cs.LE, "x")])
    with pytest.raises(AssemblyError):
        assemble(bad, 0.0, sp, g)
    with pytest.raises(AssemblyError):
        assemble(cs.RowBlock([], {cs.U: (0, 1)}), 0.0, sp, g)
    with pytest.raises(AssemblyError):
        QpProblem(["a", "b"], [0, 0], [1, 1], [[1, 0.5], [0, 1]], [0, 0], [])
    with pytest.raises(AssemblyError):
        QpProblem(["a", "a"], [0, 0], [1, 1], np.eye(2), [0, 0], [])
    with pytest.raises(AssemblyError):
        QpProblem(["a"], [0], [1], [[1]], [0], [ConstraintRow({"a": math.nan}, 0.0, cs.LE, "n")])


def test_format_problem_lists_everything():
    s = VehicleState(10.0, 0.0, 0.0, 20.0)
    blk, gains = _controller_block(s, 200.0, 20.0, 0.0, DisturbancePolytope.box([-0.5], [0.5]))
    p = assemble(blk, 0.0, SafetyParams(), gains)
    text = format_problem(p)
    lines = text.splitlines()
    assert lines[0] == "# variables: id lower upper"
    assert sum(1 for ln in lines if ln.startswith("cbf_")) == 2
    assert "# Q (row-major)" in lines and "# F" in lines
    assert lines.index("# F") - lines.index("# Q (row-major)") - 1 == len(p.var_ids)
