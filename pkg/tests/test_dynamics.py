import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fxtocbf.dynamics import (
    ContractError, ControlInput, DisturbancePolytope, IntegrationError, VehicleModel, VehicleState,
    disturbance_matrix,
)

finite = st.floats(-50, 50, allow_nan=False)
speeds = st.floats(0, 40, allow_nan=False)


def test_derivative_examples():
    m = VehicleModel()
    np.testing.assert_allclose(m.derivative(VehicleState(0, 0, 0, 20), ControlInput(1, 0)), [20, 0, 0, 1])
    np.testing.assert_allclose(m.derivative(VehicleState(0, 0, 0, 0), ControlInput(0, 0.1)), [0, 0, 0, 0])
    np.testing.assert_allclose(m.derivative(VehicleState(0, 0, math.pi / 2, 10), ControlInput(0, 0)),
                               [0, 10, 0, 0], atol=1e-12)


def test_derivative_rejects_wrong_disturbance_size():
    with pytest.raises(ContractError):
        VehicleModel().derivative(VehicleState(0, 0, 0, 1), ControlInput(0, 0), [0.0, 0.0])


def test_step_examples():
    m = VehicleModel()
    s = m.step(VehicleState(0, 0, 0, 20), ControlInput(0, 0), dt=0.1)
    assert s.x == pytest.approx(2.0, abs=1e-12)
    s = m.step(VehicleState(0, 0, 0, 20), ControlInput(2, 0), dt=0.1)
    assert s.v == pytest.approx(20.2, abs=1e-12)
    assert s.x == pytest.approx(2.01, abs=1e-12)
    s = m.step(VehicleState(0, 0, 0, 0), ControlInput(-1, 0), dt=0.1)
    assert s.v == 0.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_step_rejects_bad_dt_and_nonfinite():
    m = VehicleModel()
    with pytest.raises(ContractError):
        m.step(VehicleState(0, 0, 0, 1), ControlInput(0, 0), dt=0.0)
    with pytest.raises(IntegrationError):
        m.step(VehicleState(0, 0, 0, 1), ControlInput(math.inf, 0), dt=0.1)


@given(finite, speeds, st.floats(-6, 3))
def test_step_matches_double_integrator(x0, v0, u):
    m = VehicleModel()
    s = VehicleState(x0, 0.0, 0.0, v0)
    dt = 0.1
    if v0 + u * 100 * dt < 0:
        u = -v0 / (100 * dt)
    for _ in range(100):
        s = m.step(s, ControlInput(u, 0.0), dt=dt)
    T = 100 * dt
    x_exact = x0 + v0 * T + 0.5 * u * T * T
    v_exact = v0 + u * T
    assert abs(s.x - x_exact) <= 1e-9 * max(1.0, abs(x_exact))
    assert abs(s.v - v_exact) <= 1e-9 * max(1.0, abs(v_exact))


@given(finite, finite, st.floats(-1, 1), speeds, finite, finite, finite, finite, finite)
def test_derivative_affine_in_inputs(x, y, th, v, u1, p1, u2, p2, w):
    m = VehicleModel()
    s = VehicleState(x, y, th, v)
    c1, c2 = ControlInput(u1, p1), ControlInput(u2, p2)
    lhs = (m.derivative(s, ControlInput(u1 + u2, p1 + p2), [w]) - m.derivative(s, c1, [w])
           - m.derivative(s, c2, [0.0]) + m.derivative(s, ControlInput(0, 0), [0.0]))
    np.testing.assert_allclose(lhs, 0.0, atol=1e-9)


@given(finite, finite, st.floats(-3, 3), speeds, finite, finite, finite, finite, finite)
def test_affine_decomposition_is_exact(x, y, th, v, u, p, wx, wy, wv):
    m = VehicleModel(channels=("x", "y", "v"))
    s = VehicleState(x, y, th, v)
    dec = m.affine_at(s)
    w = np.array([wx, wy, wv])
    np.testing.assert_allclose(m.derivative(s, ControlInput(u, p), w),
                               dec.f + dec.g @ [u, p] + dec.d @ w, rtol=0, atol=1e-12)


def test_affine_at_examples():
    m = VehicleModel(wheelbase=2.5)
    dec = m.affine_at(VehicleState(0, 0, 0, 20))
    np.testing.assert_allclose(dec.f, [20, 0, 0, 0])
    dec = m.affine_at(VehicleState(0, 0, 0, 10))
    np.testing.assert_allclose(dec.g[:, 1], [0, 0, 4, 0])
    np.testing.assert_allclose(dec.g[:, 0], [0, 0, 0, 1])
    np.testing.assert_allclose(dec.d[:, 0], [0, 0, 0, 1])


def test_disturbance_matrix_channels():
    d = disturbance_matrix(("x", "v"))
    np.testing.assert_array_equal(d, [[1, 0], [0, 0], [0, 0], [0, 1]])
    with pytest.raises(ContractError):
        disturbance_matrix(("theta",))


def test_polytope_box():
    W = DisturbancePolytope.box([-1, 0], [1, 2])
    assert W.is_box and W.dim == 2
    lo, hi = W.box_bounds()
    np.testing.assert_array_equal(lo, [-1, 0])
    np.testing.assert_array_equal(hi, [1, 2])
    assert len(W.vertices()) == 4
    assert W.contains([0, 0]) and not W.contains([0, 3])


def test_polytope_general_ok():
    # triangle around the origin
    W = DisturbancePolytope([[1, 1], [-1, 0], [0, -1]], [1, 1, 1])
    assert not W.is_box and W.dim == 2
    with pytest.raises(ContractError):
        W.vertices()


@pytest.mark.parametrize("A, b", [
    ([[1.0]], [1.0]),                # unbounded below
    ([[1, 0], [-1, 0]], [1, 1]),     # unbounded in the second coordinate
])
def test_polytope_unbounded_rejected(A, b):
    with pytest.raises(ContractError, match="unbounded"):
        DisturbancePolytope(A, b)


def test_polytope_must_contain_zero_and_be_nonempty():
    with pytest.raises(ContractError):
        DisturbancePolytope.box([0.5], [1.0])
    with pytest.raises(ContractError):
        DisturbancePolytope([[1.0], [-1.0]], [1.0])
