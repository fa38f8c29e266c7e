import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from rimfusion import scenario as sc
from rimfusion import strapdown as sd
from rimfusion.errors import InvalidWaypoints, MisalignedTracks
from rimfusion.localization import corner_beacons
from rimfusion.manifold import ManifoldParams

PARAMS = ManifoldParams(0.2)
BEACONS = corner_beacons()
ORIENT_FILTERS = ("ekf-gn", "ekf-rsd", "ekf-rtr", "ukf-gn", "ukf-rsd", "ukf-rtr")
POSITION_FILTERS = ("lkf-gn", "lkf-rtr", "1rx", "pc-gn", "pc-rsd", "pc-rtr")


@pytest.fixture(scope="module")
def loop():
    return sc.generate_trajectory(duration=60.0)


@pytest.fixture(scope="module")
def noiseless_tracks(loop):
    imu = sc.synthesize_imu(loop)
    epochs = sc.synthesize_ranges(loop, BEACONS, PARAMS, rate=10)
    return sc.run_pipeline(loop, imu, epochs, sc.PipelineConfig(params=PARAMS))


# ---------------------------------------------------------------- trajectory


def test_straight_line_still():
    tr = sc.generate_trajectory(
        [(1.0, 1.0, 1.2), (7.0, 3.0, 1.2)], duration=None, closed=False,
        orientation=sc.OrientationProfile.still(),
    )
    assert np.all(tr.omega == 0)
    assert np.allclose(tr.C, np.eye(3))
    ramp = tr.model.speed.ramp_time
    cruise = (tr.t > ramp + 1e-9) & (tr.t < tr.t[-1] - ramp - 1e-9)
    assert np.allclose(tr.a[cruise], 0, atol=1e-12)
    assert np.allclose(np.linalg.norm(tr.v[cruise], axis=1), 1.4)
    assert np.allclose(tr.p[-1], [7.0, 3.0, 1.2], atol=1e-12)
    assert np.allclose(tr.v[0], 0) and np.allclose(tr.v[-1], 0)


def test_rectangle_finite_differences():
    rect = [(2, 1, 1.2), (8, 1, 1.2), (8, 4, 1.2), (2, 4, 1.2)]
    tr = sc.generate_trajectory(rect, duration=30.0, speed=sc.SpeedProfile(1.5))
    n = len(tr)
    dt = tr.dt
    fd_v = (tr.p[2:] - tr.p[:-2]) / (2 * dt)
    rel = np.linalg.norm(fd_v - tr.v[1:-1], axis=1) / np.maximum(np.linalg.norm(tr.v[1:-1], axis=1), 1e-3)
    assert rel[200:].max() <= 1.0 / n
    fd_a = (tr.v[2:] - tr.v[:-2]) / (2 * dt)
    assert np.abs(fd_a - tr.a[1:-1]).max() < 5e-3
    # body rates: dC/dt = C skew(w)
    fd_C = (tr.C[2:] - tr.C[:-2]) / (2 * dt)
    W = np.array([[[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]] for w in tr.omega[1:-1]])
    assert np.abs(fd_C - tr.C[1:-1] @ W).max() < 1e-4


def test_orientation_orthogonal(loop):
    err = np.abs(np.swapaxes(loop.C, 1, 2) @ loop.C - np.eye(3)).max()
    assert err < 1e-10
    assert np.allclose(np.linalg.det(loop.C), 1.0, atol=1e-10)


def test_default_loop_is_a_walk(loop):
    speed = np.linalg.norm(loop.v, axis=1)[loop.t > 1.0]
    assert 1.0 <= speed.min() and speed.max() <= 1.8
    assert np.all(loop.p > 0.5) and np.all(loop.p < np.array([9.5, 4.5, 2.5]))
    yaw, pitch, roll = sc.rotation_to_euler(loop.C).T
    for ang in (yaw, pitch, roll):
        assert np.ptp(ang) > 10


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(waypoints=[(1.0, 1.0, 1.0)], closed=False),
        dict(waypoints=[(1.0, 1.0, 1.0), (1.0, 1.0, 1.0)], closed=False),
        dict(waypoints=[(1.0, 1.0, 1.0), (np.nan, 1.0, 1.0)], closed=False),
        dict(waypoints=[(1.0, 1.0, 1.0), (2.0, 2.0, 1.0)], closed=True),
        dict(waypoints=sc.DEFAULT_LOOP, speed=sc.SpeedProfile(cruise=4.0)),
        dict(waypoints=[(1.0, 1.0, 1.0), (1.2, 1.0, 1.0)], closed=False),
    ],
)
def test_invalid_waypoints(kwargs):
    with pytest.raises(InvalidWaypoints):
        sc.generate_trajectory(**kwargs)


# ---------------------------------------------------------------- sensors


def test_imu_rest_specific_force():
    orient = sc.OrientationProfile((0.0, 0.0, 0.0), offset_deg=(30.0, 10.0, -20.0))
    tr = sc.generate_trajectory([(1.0, 1.0, 1.0), (4.0, 1.0, 1.0)], duration=5.0, closed=False, orientation=orient)
    imu = sc.synthesize_imu(tr, free=False)
    rest = tr.t[:-1] > tr.model.t_end + 0.01
    C = tr.C[0]
    assert rest.sum() > 10
    assert np.allclose(imu.accel[rest], C.T @ [0, 0, sd.GRAVITY], atol=1e-12)
    assert np.all(imu.gyro == 0)
    assert not imu.free.any()


def test_imu_dead_reckoning_bound(loop):
    imu = sc.synthesize_imu(loop)
    params = sd.InsParams(loop.dt)
    worst = 0.0
    for start in range(0, len(imu) - 200, 250):
        init = sd.NavState(loop.p[start], loop.v[start], loop.C[start])
        out = sd.dead_reckon(imu[start : start + 200], init, params)
        err = np.linalg.norm(np.array([s.p for s in out]) - loop.p[start + 1 : start + 201], axis=1)
        worst = max(worst, err.max())
    assert worst < 0.01


def test_gyro_noise_superlinear(loop):
    clean = sc.synthesize_imu(loop)
    params = sd.InsParams(loop.dt)
    init = sd.NavState(loop.p[1000], loop.v[1000], loop.C[1000])
    ref = np.array([s.p for s in sd.dead_reckon(clean[1000:1200], init, params)])
    half, full = [], []
    for seed in range(20):
        noisy = sc.synthesize_imu(loop, sc.NoiseSpec(sigma_omega=0.5, seed=seed))
        est = np.array([s.p for s in sd.dead_reckon(noisy[1000:1200], init, params)])
        e = np.linalg.norm(est - ref, axis=1)
        half.append(e[99])
        full.append(e[199])
    assert np.median(full) > 2.0 * np.median(half)


def test_imu_noise_statistics():
    tr = sc.generate_trajectory(duration=334.0)
    clean = sc.synthesize_imu(tr)
    noisy = sc.synthesize_imu(tr, sc.NoiseSpec(sigma_a=0.5, sigma_omega=0.2, seed=3))
    ra = (noisy.accel - clean.accel).ravel()
    rw = (noisy.gyro - clean.gyro).ravel()
    assert ra.size >= 100000
    assert abs(ra.var() / 0.25 - 1) < 0.05
    assert abs(rw.var() / 0.04 - 1) < 0.05


def test_imu_seeded(loop):
    a = sc.synthesize_imu(loop, sc.NoiseSpec(1.0, 1.0, seed=9))
    b = sc.synthesize_imu(loop, sc.NoiseSpec(1.0, 1.0, seed=9))
    c = sc.synthesize_imu(loop, sc.NoiseSpec(1.0, 1.0, seed=10))
    assert np.array_equal(a.accel, b.accel) and np.array_equal(a.gyro, b.gyro)
    assert not np.array_equal(a.accel, c.accel)


def test_ranges_exact(loop):
    epochs = sc.synthesize_ranges(loop, BEACONS, PARAMS, rate=10)
    assert len(epochs) == 600 and epochs[0].k == 10
    V = loop.vertices(PARAMS)
    for ep in epochs[::37]:
        for i in range(3):
            for j in range(4):
                assert ep.ranges.r[i, j] == pytest.approx(np.linalg.norm(V[ep.k][:, i] - BEACONS.B[j]), abs=1e-14)
        assert ep.ranges.los.all()


def test_ranges_nlos_window(loop):
    nlos = sc.NlosSpec(0, 10.0, 3.0)
    epochs = sc.synthesize_ranges(loop, BEACONS, PARAMS, sc.NoiseSpec(sigma_d=0.02, seed=1), nlos, rate=10)
    for ep in epochs:
        inside = 10.0 <= ep.t <= 13.0
        assert ep.ranges.los[0] == (not inside)
        assert ep.ranges.los[1:].all()
        if inside:
            assert np.all((ep.ranges.r[:, 0] >= 0.5) & (ep.ranges.r[:, 0] <= sc.room_diagonal()))
    with pytest.raises(ValueError):
        sc.synthesize_ranges(loop, BEACONS, PARAMS, nlos=sc.NlosSpec(0, 59.0, 3.0))
    with pytest.raises(ValueError):
        sc.synthesize_ranges(loop, BEACONS, PARAMS, nlos=sc.NlosSpec(4, 10.0, 3.0))


def test_range_noise_statistics(loop):
    clean = sc.synthesize_ranges(loop, BEACONS, PARAMS, rate=50)
    noisy = sc.synthesize_ranges(loop, BEACONS, PARAMS, sc.NoiseSpec(sigma_d=0.05, seed=4), rate=50)
    res = np.concatenate([(b.ranges.r - a.ranges.r).ravel() for a, b in zip(clean, noisy)])
    big = sc.generate_trajectory(duration=180.0)
    c2 = sc.synthesize_ranges(big, BEACONS, PARAMS, rate=50)
    n2 = sc.synthesize_ranges(big, BEACONS, PARAMS, sc.NoiseSpec(sigma_d=0.05, seed=5), rate=50)
    res = np.concatenate([res] + [(b.ranges.r - a.ranges.r).ravel() for a, b in zip(c2, n2)])
    assert res.size >= 100000
    assert abs(res.var() / 0.0025 - 1) < 0.05


def test_range_rate_must_divide(loop):
    with pytest.raises(ValueError):
        sc.synthesize_ranges(loop, BEACONS, PARAMS, rate=30)


# ---------------------------------------------------------------- pipeline


def test_zero_noise_orientation_filters(loop, noiseless_tracks):
    for alg in ORIENT_FILTERS:
        m = sc.compute_metrics(loop, noiseless_tracks[alg], PARAMS)
        assert m.errors.max() < 1e-4, alg
        assert np.abs(m.euler_errors).max() < 0.01, alg


def test_zero_noise_position_filters_drift_from_attitude(loop):
    # with noiseless fixes the remaining centroid error of the position-only
    # filter comes from its uncorrected inertial attitude; keeping that
    # attitude orthonormal removes most of it
    from rimfusion import fusion as fu

    imu = sc.synthesize_imu(loop)
    worst = {}
    for renorm in (False, True):
        f = fu.PositionFilter.from_state(fu.initial_state(loop.p[0], loop.v[0], loop.C[0]), 1e-3)
        err = 0.0
        for k in range(len(imu)):
            f.predict(imu.accel[k], imu.gyro[k], loop.dt)
            if renorm:
                f.C = sd.renormalize(f.C)
            if (k + 1) % 10 == 0:
                f.update(loop.p[k + 1], np.full(3, 1e-8))
            err = max(err, np.linalg.norm(f.x[:3] - loop.p[k + 1]))
        worst[renorm] = err
    assert worst[False] < 0.02
    assert worst[True] < 0.2 * worst[False]


@pytest.mark.xfail(strict=True, reason="first-order inertial attitude stretches by ~2% over 60 s")
def test_zero_noise_position_filters_vertices(loop, noiseless_tracks):
    for alg in POSITION_FILTERS:
        assert sc.compute_metrics(loop, noiseless_tracks[alg], PARAMS).errors.max() < 1e-4, alg


def test_lkf_aliases(noiseless_tracks):
    assert np.array_equal(noiseless_tracks["lkf-gn"].x, noiseless_tracks["pc-gn"].x)
    assert np.array_equal(noiseless_tracks["lkf-rtr"].x, noiseless_tracks["pc-rtr"].x)


def test_pipeline_deterministic():
    tr = sc.generate_trajectory(duration=8.0)
    noise = sc.NoiseSpec(0.5, 0.5, 0.03, seed=2)
    cfg = sc.PipelineConfig(params=PARAMS, noise=noise, algorithms=("ekf-rtr", "ukf-gn", "1rx"))
    runs = []
    for _ in range(2):
        sc._FIX_CACHE.clear()
        imu = sc.synthesize_imu(tr, noise)
        ep = sc.synthesize_ranges(tr, BEACONS, PARAMS, noise)
        runs.append(sc.run_pipeline(tr, imu, ep, cfg))
    for alg in cfg.algorithms:
        assert np.array_equal(runs[0][alg].x, runs[1][alg].x)


def test_nlos_oracle_gating_helps():
    tr = sc.generate_trajectory(duration=20.0)
    noise = sc.NoiseSpec(0.05, 0.25, 0.025, seed=0)
    nlos = sc.NlosSpec(0, 8.0, 3.0)
    imu = sc.synthesize_imu(tr, noise)
    ep = sc.synthesize_ranges(tr, BEACONS, PARAMS, noise, nlos)
    window = nlos.contains(tr.t)
    rmse = {}
    for gating in ("none", "oracle"):
        cfg = sc.PipelineConfig(params=PARAMS, noise=noise, algorithms=("ekf-rtr",), gating=gating)
        m = sc.compute_metrics(tr, sc.run_pipeline(tr, imu, ep, cfg)["ekf-rtr"], PARAMS)
        rmse[gating] = m.window_rmse(window)
    assert rmse["oracle"] < rmse["none"]


def test_pipeline_two_beacons_predict_only():
    tr = sc.generate_trajectory(duration=4.0)
    two = corner_beacons().subset([True, True, False, False])
    ep = sc.synthesize_ranges(tr, two, PARAMS)
    cfg = sc.PipelineConfig(params=PARAMS, beacons=two, algorithms=("ekf-gn",), gating="oracle")
    out = sc.run_pipeline(tr, sc.synthesize_imu(tr), ep, cfg)["ekf-gn"]
    assert np.all(np.isfinite(out.x))


def test_pipeline_misaligned(loop):
    short = sc.generate_trajectory(duration=5.0)
    with pytest.raises(MisalignedTracks):
        sc.run_pipeline(loop, sc.synthesize_imu(short), [], sc.PipelineConfig(params=PARAMS))


def test_config_validation():
    with pytest.raises(ValueError):
        sc.PipelineConfig(algorithms=("ekf-foo",))
    with pytest.raises(ValueError):
        sc.PipelineConfig(gating="maybe")


# ---------------------------------------------------------------- metrics


def test_euler_examples():
    assert np.allclose(sc.rotation_to_euler(np.eye(3)), (0, 0, 0))
    Rz = Rotation.from_euler("z", 30, degrees=True).as_matrix()
    assert np.allclose(sc.rotation_to_euler(Rz), (30, 0, 0))


def test_euler_round_trip():
    rng = np.random.default_rng(0)
    n = 10000
    ang = np.column_stack([rng.uniform(-179, 179, n), rng.uniform(-89, 89, n), rng.uniform(-179, 179, n)])
    C = sc.euler_to_rotation(ang[:, 0], ang[:, 1], ang[:, 2])
    ref = Rotation.from_euler("ZYX", ang, degrees=True).as_matrix()
    assert np.abs(C - ref).max() < 1e-14
    assert np.abs(sc.rotation_to_euler(C) - ang).max() < 1e-10


def test_euler_gimbal_lock():
    for pitch in (90.0, -90.0):
        C = sc.euler_to_rotation(40.0, pitch, 25.0)
        yaw, p, roll = sc.rotation_to_euler(C)
        assert roll == 0.0 and p == pytest.approx(pitch)
        assert np.allclose(sc.euler_to_rotation(yaw, p, roll), C, atol=1e-12)


def test_nearest_rotation():
    rng = np.random.default_rng(1)
    R = Rotation.random(5, random_state=2).as_matrix()
    out = sc.nearest_rotation(1.07 * R + 1e-3 * rng.normal(size=(5, 3, 3)))
    assert np.allclose(np.linalg.det(out), 1.0)
    assert np.abs(out - R).max() < 1e-2
    assert np.allclose(sc.nearest_rotation(R[0]), R[0])


def _truth_track(tr):
    from rimfusion.fusion import vec

    X = np.column_stack([tr.p, tr.v, np.array([vec(C) for C in tr.C])])
    return sc.Track(tr.t.copy(), X)


def test_metrics_truth():
    tr = sc.generate_trajectory(duration=5.0)
    m = sc.compute_metrics(tr, _truth_track(tr), PARAMS)
    assert m.rmse_avg < 1e-14 and np.all(m.euler_rmse < 1e-9)
    assert m.cdf_fraction[0] == 1.0 and m.cdf_fraction[-1] == 1.0


def test_metrics_one_vertex_offset():
    from rimfusion.fusion import vec
    from rimfusion.localization import triangle_offsets

    tr = sc.generate_trajectory(duration=5.0)
    V = tr.vertices(PARAMS).copy()
    V[:, 0, 0] += 0.10
    pc = V.mean(axis=2)
    Dp = np.linalg.pinv(triangle_offsets(PARAMS.d))
    C = (V - pc[:, :, None]) @ Dp
    X = np.column_stack([pc, tr.v, np.array([vec(c) for c in C])])
    m = sc.compute_metrics(tr, sc.Track(tr.t, X), PARAMS)
    assert np.allclose(m.rmse, [0.10, 0.0, 0.0], atol=1e-12)
    assert m.rmse_avg == pytest.approx(0.1 / 3, abs=1e-12)


def test_metrics_cdf_percentile():
    tr = sc.generate_trajectory(duration=20.0)
    rng = np.random.default_rng(5)
    est = _truth_track(tr)
    X = est.x.copy()
    X[:, 0:3] += rng.normal(scale=0.05, size=(len(tr), 3))
    m = sc.compute_metrics(tr, sc.Track(tr.t, X), PARAMS)
    mean_err = np.sort(m.errors.mean(axis=1))
    q85 = mean_err[int(np.ceil(0.85 * mean_err.size)) - 1]
    assert m.fraction_below(q85) >= 0.85
    assert m.fraction_below(np.nextafter(q85, 0)) < 0.85
    i = np.searchsorted(m.cdf_error, 0.05)
    assert m.cdf_fraction[i] == pytest.approx(np.mean(mean_err <= m.cdf_error[i]))
    assert np.all(np.diff(m.cdf_fraction) >= 0) and m.cdf_fraction[-1] == 1.0
    assert np.all(np.diff(m.cdf_pooled_fraction) >= 0) and m.cdf_pooled_fraction[-1] == 1.0


def test_metrics_misaligned():
    tr = sc.generate_trajectory(duration=5.0)
    short = sc.generate_trajectory(duration=4.0)
    with pytest.raises(MisalignedTracks):
        sc.compute_metrics(tr, _truth_track(short), PARAMS)
