import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm
from scipy.spatial.transform import Rotation

from rimfusion import strapdown as sd
from rimfusion.errors import NonMonotonicTimestamps
from rimfusion.manifold import skew

from helpers import random_rotation

G = sd.GRAVITY
seeds = st.integers(min_value=0, max_value=2**32 - 1)


def test_orientation_zero_rate():
    C = random_rotation(np.random.default_rng(0))
    assert np.array_equal(sd.orientation_step(C, np.zeros(3), 0.01), C)


@pytest.mark.parametrize("steps", [10000, 20000])
def test_orientation_constant_rate_closed_form(steps):
    C = np.eye(3)
    w = np.array([0.0, 0.0, np.pi / 2])
    for _ in range(steps):
        C = sd.orientation_step(C, w, 1e-4)
    ref = Rotation.from_euler("z", w[2] * steps * 1e-4).as_matrix()
    assert np.linalg.norm(C - ref) < 1e-3


def test_orientation_second_order_error():
    rng = np.random.default_rng(1)
    for _ in range(20):
        C = random_rotation(rng)
        w = rng.normal(size=3)
        errs = []
        for dt in (1e-3, 1e-4):
            exact = C @ expm(dt * skew(w))
            errs.append(np.linalg.norm(sd.orientation_step(C, w, dt) - exact))
        assert 80 < errs[0] / errs[1] < 120


@given(seeds)
@settings(max_examples=100, deadline=None)
def test_orientation_determinant(seed):
    rng = np.random.default_rng(seed)
    C = random_rotation(rng)
    w = rng.normal(scale=2, size=3)
    dt = rng.uniform(1e-4, 0.05)
    out = sd.orientation_step(C, w, dt)
    assert abs(np.linalg.det(out) - 1) <= 2 * (w @ w) * dt * dt


def test_orientation_scale_growth_law():
    # C'^T C' = C^T C + dt^2 skew(w)^T C^T C skew(w), so for a unit-norm axis
    # orthogonal to w, the column norm grows by exactly (1 + dt^2|w|^2)
    w = np.array([0.0, 0.0, 2.0])
    dt = 0.01
    C = np.eye(3)
    for _ in range(100):
        C = sd.orientation_step(C, w, dt)
    expected = (1 + dt * dt * 4.0) ** 50
    assert np.linalg.norm(C[:, 0]) == pytest.approx(expected, rel=1e-12)
    assert np.linalg.norm(C[:, 2]) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.xfail(strict=True, reason="first-order update inflates scale by dt^2|w|^2 per step")
def test_orthogonality_budget_at_two_rad_per_second():
    w = np.array([0.0, 0.0, 2.0])
    C = np.eye(3)
    for _ in range(10000):
        C = sd.orientation_step(C, w, 0.01)
    assert np.linalg.norm(C.T @ C - np.eye(3)) <= 1e-3


def test_orthogonality_budget_slow_rotation():
    rng = np.random.default_rng(2)
    w = rng.normal(size=3)
    w *= 0.02 / np.linalg.norm(w)
    C = np.eye(3)
    for _ in range(10000):
        C = sd.orientation_step(C, w, 0.01)
    assert np.linalg.norm(C.T @ C - np.eye(3)) <= 1e-3
    R = sd.renormalize(C)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-14)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-14)


def test_gravity_examples():
    assert np.allclose(sd.gravity_compensate(np.eye(3), [0, 0, G]), 0, atol=1e-15)
    Rz = Rotation.from_euler("z", 1.1).as_matrix()
    assert np.allclose(sd.gravity_compensate(Rz, [0, 0, G]), 0, atol=1e-14)
    Ry = Rotation.from_euler("y", np.pi / 2).as_matrix()
    assert np.allclose(sd.gravity_compensate(Ry, [-G, 0, 0]), 0, atol=1e-14)


@given(seeds)
@settings(max_examples=100, deadline=None)
def test_gravity_exact_at_rest(seed):
    C = random_rotation(np.random.default_rng(seed))
    assert np.linalg.norm(sd.gravity_compensate(C, C.T @ [0, 0, G])) < 1e-12


def test_kinematic_examples():
    s = sd.NavState(np.zeros(3), np.array([1.0, 0, 0]), np.eye(3))
    out = sd.kinematic_step(s, np.zeros(3), 0.01)
    assert np.allclose(out.p, [0.01, 0, 0]) and np.array_equal(out.v, s.v)
    # dyadic values keep the round trip free of rounding
    a = np.array([0.25, -1.0, 2.0])
    back = sd.kinematic_step(sd.kinematic_step(s, a, 0.125), -a, 0.125)
    assert np.array_equal(back.v, s.v)


def test_kinematic_constant_acceleration():
    a = np.array([0.5, -0.2, 0.1])
    dt = 0.01
    for n in (10, 100, 1000):
        s = sd.NavState(np.zeros(3), np.zeros(3), np.eye(3))
        for _ in range(n):
            s = sd.kinematic_step(s, a, dt)
        ref = 0.5 * a * (n * dt) ** 2
        assert np.linalg.norm(s.p - ref) / np.linalg.norm(ref) <= 1.0 / n + 1e-12


def test_ins_step_gravity_flag():
    rng = np.random.default_rng(3)
    C = random_rotation(rng)
    s0 = sd.NavState(np.zeros(3), np.zeros(3), C)
    w = rng.normal(size=3)
    a = rng.normal(size=3)
    params = sd.InsParams(0.01)
    s1 = sd.ins_step(s0, sd.ImuSample(0.0, a, w, True), params)
    s2 = sd.ins_step(s0, sd.ImuSample(0.0, a + C.T @ [0, 0, G], w, False), params)
    assert np.allclose(s1.p, s2.p, atol=1e-15) and np.allclose(s1.v, s2.v, atol=1e-14)
    assert np.array_equal(s1.C, s2.C)


def test_dead_reckon_zero_stream():
    n = 50
    stream = sd.ImuStream(np.arange(n) * 0.01, np.zeros((n, 3)), np.zeros((n, 3)), True)
    init = sd.NavState(np.ones(3), np.zeros(3), np.eye(3))
    out = sd.dead_reckon(stream, init, sd.InsParams(0.01))
    assert len(out) == n
    assert all(np.array_equal(s.p, init.p) and np.array_equal(s.C, init.C) for s in out)


@given(seeds, st.integers(min_value=1, max_value=39))
@settings(max_examples=50, deadline=None)
def test_dead_reckon_split_equals_whole(seed, cut):
    rng = np.random.default_rng(seed)
    n = 40
    stream = sd.ImuStream(np.arange(n) * 0.01, rng.normal(size=(n, 3)), rng.normal(size=(n, 3)), rng.integers(2, size=n))
    init = sd.NavState(rng.normal(size=3), rng.normal(size=3), random_rotation(rng))
    params = sd.InsParams(0.01)
    whole = sd.dead_reckon(stream, init, params)
    head = sd.dead_reckon(stream[:cut], init, params)
    tail = sd.dead_reckon(stream[cut:], head[-1], params)
    for a, b in zip(whole, head + tail):
        assert np.array_equal(a.p, b.p) and np.array_equal(a.v, b.v) and np.array_equal(a.C, b.C)


def test_dead_reckon_sample_list():
    rng = np.random.default_rng(4)
    samples = [sd.ImuSample(0.01 * k, rng.normal(size=3), rng.normal(size=3)) for k in range(10)]
    init = sd.NavState(np.zeros(3), np.zeros(3), np.eye(3))
    a = sd.dead_reckon(samples, init, sd.InsParams(0.01))
    b = sd.dead_reckon(sd.ImuStream.from_samples(samples), init, sd.InsParams(0.01))
    assert all(np.array_equal(x.p, y.p) for x, y in zip(a, b))


def test_non_monotonic():
    with pytest.raises(NonMonotonicTimestamps) as exc:
        sd.ImuStream([0.0, 0.01, 0.01, 0.03], np.zeros((4, 3)), np.zeros((4, 3)), True)
    assert exc.value.index == 2
    samples = [sd.ImuSample(t, np.zeros(3), np.zeros(3)) for t in (0.0, 0.02, 0.01)]
    with pytest.raises(NonMonotonicTimestamps):
        sd.dead_reckon(samples, sd.NavState(np.zeros(3), np.zeros(3), np.eye(3)), sd.InsParams(0.01))


def test_invalid_inputs():
    with pytest.raises(ValueError):
        sd.InsParams(0.0)
    with pytest.raises(ValueError):
        sd.ImuStream([0.0], [[np.nan, 0, 0]], [[0, 0, 0]], True)
