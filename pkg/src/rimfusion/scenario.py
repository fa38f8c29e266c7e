"""Synthetic walks, sensor simulation, the estimation pipeline and metrics.

A trajectory is a C2 cubic spline through waypoints (chord-length parameter,
periodic for closed loops) traversed with a smooth speed ramp, plus a
yaw/pitch/roll profile made of sinusoids.  Velocity, acceleration and body
rates are analytic.  IMU samples are taken at interval midpoints, which is
the second-order-consistent choice for the filter's one-step model.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InvalidWaypoints, MisalignedTracks, RimFusionError, RuntimeFailure, SingularNormalEquations
from .fusion import (
    STATE_DIM,
    GeometryOffsets,
    OrientationFilter,
    PositionFilter,
    ProcessNoise,
    UkfParams,
    initial_state,
    vec,
)
from .localization import (
    BeaconSet,
    Pose,
    RangeSet,
    SolverOptions,
    corner_beacons,
    gn_solve,
    rsd_solve,
    rtr_solve,
    triangle_offsets,
    vertices_from_pose,
)
from .manifold import ManifoldParams, retract_nearest
from .strapdown import GRAVITY, ImuStream

__all__ = [
    "ALGORITHMS",
    "DEFAULT_ROOM",
    "DEFAULT_LOOP",
    "SpeedProfile",
    "OrientationProfile",
    "Trajectory",
    "NoiseSpec",
    "NlosSpec",
    "RangeEpoch",
    "Track",
    "PipelineConfig",
    "MetricsReport",
    "generate_trajectory",
    "synthesize_imu",
    "synthesize_ranges",
    "run_pipeline",
    "euler_to_rotation",
    "rotation_to_euler",
    "nearest_rotation",
    "compute_metrics",
]

ALGORITHMS = (
    "lkf-gn", "lkf-rtr", "1rx", "pc-gn", "pc-rsd", "pc-rtr",
    "ekf-gn", "ekf-rsd", "ekf-rtr", "ukf-gn", "ukf-rsd", "ukf-rtr",
)
DEFAULT_ROOM = (10.0, 5.0, 3.0)
DEFAULT_LOOP = (
    (2.0, 1.2, 1.2), (5.0, 1.0, 1.3), (8.0, 1.2, 1.25), (8.8, 2.5, 1.15),
    (8.0, 3.8, 1.1), (5.0, 4.0, 1.2), (2.0, 3.8, 1.3), (1.2, 2.5, 1.2),
)
SPEED_BAND = (0.5, 3.0)


# ---------------------------------------------------------------- trajectory


@dataclass(frozen=True)
class SpeedProfile:
    """Cruise speed along the path parameter with a quintic ramp."""

    cruise: float = 1.4
    ramp_time: float = 1.0


@dataclass(frozen=True)
class OrientationProfile:
    """Yaw, pitch and roll as ``offset + amplitude sin(2 pi f t + phase)``.

    Angles in degrees, frequencies in Hz, phases in radians; the order of
    every triple is (yaw, pitch, roll).
    """

    amplitude_deg: tuple = (45.0, 10.0, 15.0)
    freq_hz: tuple = (0.07, 0.13, 0.11)
    phase: tuple = (0.0, 0.0, 0.0)
    offset_deg: tuple = (0.0, 0.0, 0.0)

    @classmethod
    def still(cls) -> "OrientationProfile":
        return cls((0.0, 0.0, 0.0))

    def angles(self, t):
        """Angles (rad) and their first derivatives, shape (n, 3) each."""
        t = np.atleast_1d(np.asarray(t, dtype=float))[:, None]
        A = np.radians(np.asarray(self.amplitude_deg, dtype=float))
        w = 2 * np.pi * np.asarray(self.freq_hz, dtype=float)
        ph = np.asarray(self.phase, dtype=float)
        arg = w * t + ph
        ang = np.radians(np.asarray(self.offset_deg, dtype=float)) + A * np.sin(arg)
        return ang, A * w * np.cos(arg)


def _ramp(tau):
    """Quintic smoothstep, its integral and its derivative on [0, 1]."""
    r = tau**3 * (10 - 15 * tau + 6 * tau * tau)
    R = tau**4 * (2.5 - 3 * tau + tau * tau)
    dr = 30 * tau * tau * (1 - tau) ** 2
    return r, R, dr


@dataclass(frozen=True)
class _PathModel:
    spline: CubicSpline
    length: float
    closed: bool
    speed: SpeedProfile
    orientation: OrientationProfile
    t_end: float

    def arc(self, t):
        """Path parameter and its first two time derivatives."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        c, Tr = self.speed.cruise, self.speed.ramp_time
        s = np.empty_like(t)
        sd = np.empty_like(t)
        sdd = np.empty_like(t)
        up = t < Tr
        r, R, dr = _ramp(np.clip(t / Tr, 0.0, 1.0))
        s[:] = c * (0.5 * Tr + t - Tr)
        sd[:] = c
        sdd[:] = 0.0
        s[up] = c * Tr * R[up]
        sd[up] = c * r[up]
        sdd[up] = c / Tr * dr[up]
        if not self.closed:
            T = self.t_end
            down = t > T - Tr
            r, R, dr = _ramp(np.clip((T - t) / Tr, 0.0, 1.0))
            s[down] = self.length - c * Tr * R[down]
            sd[down] = c * r[down]
            sdd[down] = -c / Tr * dr[down]
            done = t >= T
            s[done] = self.length
            sd[done] = 0.0
            sdd[done] = 0.0
        return s, sd, sdd

    def evaluate(self, t):
        """Position, velocity, acceleration, DCM and body rate at times ``t``."""
        s, sd, sdd = self.arc(t)
        if self.closed:
            s = np.mod(s, self.length)
        d0 = self.spline(s)
        d1 = self.spline(s, 1)
        d2 = self.spline(s, 2)
        p = d0
        v = d1 * sd[:, None]
        a = d2 * (sd * sd)[:, None] + d1 * sdd[:, None]
        ang, rate = self.orientation.angles(t)
        C = euler_to_rotation(ang[:, 0], ang[:, 1], ang[:, 2], degrees=False)
        omega = _body_rates(ang, rate)
        return p, v, a, C, omega


def _body_rates(ang, rate):
    """Body-frame angular velocity of a Z-Y-X Euler sequence."""
    _, th, ph = ang.T
    dps, dth, dph = rate.T
    sth, cth = np.sin(th), np.cos(th)
    sph, cph = np.sin(ph), np.cos(ph)
    return np.column_stack(
        (dph - dps * sth, dth * cph + dps * cth * sph, -dth * sph + dps * cth * cph)
    )


@dataclass(frozen=True)
class Trajectory:
    """Ground truth sampled on a uniform grid.

    Attributes
    ----------
    t : (N,) array, s
    p, v, a : (N, 3) arrays
        Centroid position, velocity and navigation-frame acceleration.
    C : (N, 3, 3) array
        Body-to-navigation rotation.
    omega : (N, 3) array
        Body-frame angular rate.
    """

    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    C: np.ndarray
    omega: np.ndarray
    model: _PathModel = field(repr=False, compare=False)

    def __len__(self):
        return self.t.size

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def pose(self, k: int) -> Pose:
        return Pose(self.p[k], self.C[k])

    def vertices(self, params: ManifoldParams) -> np.ndarray:
        """Vertex matrices, shape (N, 3, 3)."""
        return self.p[:, :, None] + self.C @ triangle_offsets(params.d)

    def window(self, start: int, stop: int) -> "Trajectory":
        sl = slice(start, stop)
        return Trajectory(self.t[sl], self.p[sl], self.v[sl], self.a[sl], self.C[sl], self.omega[sl], self.model)


def generate_trajectory(
    waypoints=DEFAULT_LOOP,
    duration: float | None = 60.0,
    rate: float = 100.0,
    speed: SpeedProfile = SpeedProfile(),
    orientation: OrientationProfile = OrientationProfile(),
    closed: bool = True,
) -> Trajectory:
    """Sample a walk through ``waypoints`` at ``rate`` Hz.

    A closed loop is traversed repeatedly for ``duration`` seconds.  An open
    path is traversed once with ramps at both ends and then held; its
    duration defaults to the traversal time.

    Raises
    ------
    InvalidWaypoints
        Fewer than two (three for a loop) distinct waypoints, non-finite
        coordinates, a path too short for the speed ramps, or a cruise speed
        outside the sanity band.
    """
    W = np.asarray(waypoints, dtype=float)
    if W.ndim != 2 or W.shape[1] != 3 or not np.all(np.isfinite(W)):
        raise InvalidWaypoints("waypoints must be a finite (K, 3) array")
    if not SPEED_BAND[0] <= speed.cruise <= SPEED_BAND[1]:
        raise InvalidWaypoints(f"cruise speed {speed.cruise} m/s outside {SPEED_BAND}")
    if not speed.ramp_time > 0 or not rate > 0:
        raise InvalidWaypoints("ramp time and rate must be positive")
    if closed:
        W = np.vstack([W, W[:1]])
    chords = np.linalg.norm(np.diff(W, axis=0), axis=1)
    if W.shape[0] < (4 if closed else 2) or np.any(chords <= 1e-9):
        raise InvalidWaypoints("need distinct consecutive waypoints (two for a path, three for a loop)")
    s = np.concatenate([[0.0], np.cumsum(chords)])
    spline = CubicSpline(s, W, bc_type="periodic" if closed else "natural")
    length = float(s[-1])
    if closed:
        if duration is None or not duration > 0:
            raise InvalidWaypoints("a closed loop needs a positive duration")
        t_end = float(duration)
    else:
        if length < speed.cruise * speed.ramp_time:
            raise InvalidWaypoints("path too short for the speed ramps")
        t_end = length / speed.cruise + speed.ramp_time
    model = _PathModel(spline, length, closed, speed, orientation, t_end)
    total = t_end if duration is None else float(duration)
    n = int(round(total * rate)) + 1
    t = np.arange(n) / rate
    p, v, a, C, omega = model.evaluate(t)
    return Trajectory(t, p, v, a, C, omega, model)


# ---------------------------------------------------------------- sensors


@dataclass(frozen=True)
class NoiseSpec:
    """White Gaussian noise levels (per axis) and the seed of all draws."""

    sigma_a: float = 0.0
    sigma_omega: float = 0.0
    sigma_d: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.sigma_a, self.sigma_omega, self.sigma_d) < 0:
            raise ValueError("noise levels must be nonnegative")


@dataclass(frozen=True)
class NlosSpec:
    """A window during which one beacon returns uniformly corrupted ranges.

    ``beacon_index`` is zero based.  ``range_high=None`` means the diagonal of
    the room.
    """

    beacon_index: int = 0
    t_start: float = 10.0
    duration: float = 3.0
    range_low: float = 0.5
    range_high: float | None = None

    def contains(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        eps = 1e-9
        return (t >= self.t_start - eps) & (t <= self.t_start + self.duration + eps)


def _rngs(seed: int):
    """Independent generators for accelerometer, gyro, ranging and NLOS draws."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]


def synthesize_imu(traj: Trajectory, noise: NoiseSpec = NoiseSpec(), free: bool = True, g: float = GRAVITY) -> ImuStream:
    """IMU stream with one sample per trajectory interval.

    Sample ``k`` is stamped ``t[k]`` and holds the kinematics at the interval
    midpoint, so ``len(result) == len(traj) - 1``.
    """
    dt = traj.dt
    tm = traj.t[:-1] + 0.5 * dt
    _, _, a_n, C, omega = traj.model.evaluate(tm)
    if not free:
        a_n = a_n + np.array([0.0, 0.0, g])
    a_b = np.einsum("nji,nj->ni", C, a_n)
    ra, rw, _, _ = _rngs(noise.seed)
    a_b = a_b + noise.sigma_a * ra.standard_normal(a_b.shape)
    w = omega + noise.sigma_omega * rw.standard_normal(omega.shape)
    return ImuStream(traj.t[:-1].copy(), a_b, w, np.full(tm.size, free))


@dataclass(frozen=True)
class RangeEpoch:
    """Ranges measured at trajectory sample ``k`` (time ``t``)."""

    k: int
    t: float
    ranges: RangeSet


def room_diagonal(room=DEFAULT_ROOM) -> float:
    return float(np.linalg.norm(room))


def synthesize_ranges(
    traj: Trajectory,
    beacons: BeaconSet,
    params: ManifoldParams,
    noise: NoiseSpec = NoiseSpec(),
    nlos: NlosSpec | None = None,
    rate: float = 10.0,
    room=DEFAULT_ROOM,
) -> list[RangeEpoch]:
    """Acoustic epochs every ``1/rate`` s, starting one period after ``t[0]``.

    The IMU rate must be an integer multiple of ``rate``.
    """
    ratio = 1.0 / (rate * traj.dt)
    step = int(round(ratio))
    if step < 1 or abs(ratio - step) > 1e-6:
        raise ValueError(f"acoustic rate {rate} Hz must divide the IMU rate {1 / traj.dt:g} Hz")
    B = beacons.B
    m = B.shape[0]
    ks = np.arange(step, len(traj), step)
    V = traj.vertices(params)[ks]
    r = np.linalg.norm(V[:, :, :, None] - B.T[None, :, None, :], axis=1)
    _, _, rr, rn = _rngs(noise.seed)
    r = r + noise.sigma_d * rr.standard_normal(r.shape)
    los = np.ones((ks.size, m), dtype=bool)
    if nlos is not None:
        if not 0 <= nlos.beacon_index < m:
            raise ValueError(f"NLOS beacon index {nlos.beacon_index} out of range")
        if nlos.t_start < traj.t[0] or nlos.t_start + nlos.duration > traj.t[-1]:
            raise ValueError("NLOS window must lie within the trajectory span")
        hi = room_diagonal(room) if nlos.range_high is None else nlos.range_high
        inside = nlos.contains(traj.t[ks])
        j = nlos.beacon_index
        r[inside, :, j] = rn.uniform(nlos.range_low, hi, size=(int(inside.sum()), 3))
        los[inside, j] = False
    return [RangeEpoch(int(k), float(traj.t[k]), RangeSet(r[e], los[e])) for e, k in enumerate(ks)]


# ---------------------------------------------------------------- pipeline


@dataclass(frozen=True)
class PipelineConfig:
    """Settings of :func:`run_pipeline`.

    ``noise`` tells the filters the sensor noise levels; process and
    measurement variances are floored at ``sigma_a_floor``,
    ``sigma_omega_floor`` and ``sigma_d_floor`` so noiseless runs stay well
    posed.  With ``r_mode='geometry'`` each receiver's measurement variance
    is the diagonal of ``sigma_d^2 (U^T U)^-1`` with ``U`` the unit vectors to
    the beacons used; ``'fixed'`` uses ``sigma_d^2`` on every coordinate.
    """

    params: ManifoldParams = ManifoldParams(0.2)
    beacons: BeaconSet = field(default_factory=lambda: corner_beacons(DEFAULT_ROOM))
    room: tuple = DEFAULT_ROOM
    algorithms: tuple = ALGORITHMS
    gating: str = "none"
    noise: NoiseSpec = NoiseSpec()
    solver: SolverOptions = SolverOptions()
    r_mode: str = "geometry"
    sigma_a_floor: float = 1e-3
    sigma_omega_floor: float = 1e-4
    sigma_d_floor: float = 1e-4
    init_sigma_p: float = 0.01
    init_sigma_v: float = 0.1
    init_sigma_c: float = 0.01
    ukf_alpha: float = 1.0
    project: bool = True
    g: float = GRAVITY

    def __post_init__(self):
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            raise ValueError(f"unknown algorithm {unknown[0]!r}")
        if self.gating not in ("none", "oracle"):
            raise ValueError(f"unknown gating mode {self.gating!r}")
        if self.r_mode not in ("geometry", "fixed"):
            raise ValueError(f"unknown measurement-noise mode {self.r_mode!r}")


@dataclass(frozen=True)
class Track:
    """Estimated states at the trajectory timestamps (rows of ``x``)."""

    t: np.ndarray
    x: np.ndarray

    def __len__(self):
        return self.t.size

    @property
    def p(self) -> np.ndarray:
        return self.x[:, 0:3]

    @property
    def v(self) -> np.ndarray:
        return self.x[:, 3:6]

    @property
    def C(self) -> np.ndarray:
        return self.x[:, 6:15].reshape(-1, 3, 3).transpose(0, 2, 1)

    def vertices(self, params: ManifoldParams) -> np.ndarray:
        return self.p[:, :, None] + self.C @ triangle_offsets(params.d)


def _solver_of(alg: str) -> str:
    return "gn" if alg == "1rx" else alg.split("-")[1]


def _inside(P, room, margin=0.5):
    lo = -margin
    hi = np.asarray(room, dtype=float)[:, None] + margin
    return bool(np.all(np.isfinite(P)) and np.all(P >= lo) and np.all(P <= hi))


_FIX_CACHE: dict = {}
_FIX_CACHE_SIZE = 32


def _fix_key(epochs, init_vertices, config, solvers):
    h = hashlib.sha1()
    for part in (
        repr((config.gating, config.solver, config.params, tuple(config.room), tuple(solvers))),
        config.beacons.B.tobytes(),
        np.asarray(init_vertices, dtype=float).tobytes(),
    ):
        h.update(part if isinstance(part, bytes) else part.encode())
    for ep in epochs:
        h.update(np.int64(ep.k).tobytes())
        h.update(ep.ranges.r.tobytes())
        h.update(ep.ranges.los.tobytes())
    return h.hexdigest()


def _localize_cached(epochs, init_vertices, config, solvers):
    """Memoized :func:`_localize`; sweeps over inertial noise reuse the fixes."""
    key = _fix_key(epochs, init_vertices, config, solvers)
    hit = _FIX_CACHE.get(key)
    if hit is None:
        hit = _localize(epochs, init_vertices, config, solvers)
        if len(_FIX_CACHE) >= _FIX_CACHE_SIZE:
            _FIX_CACHE.pop(next(iter(_FIX_CACHE)))
        _FIX_CACHE[key] = hit
    return hit


def _localize(epochs, init_vertices, config: PipelineConfig, solvers):
    """Vertex fixes per epoch for each requested solver.

    Gauss-Newton is warm started from its previous solution (or the room
    centre when that left the room); the Riemannian solvers start from the
    nearest manifold point to the Gauss-Newton fix.  Epochs with fewer than
    three usable beacons map to ``None``.
    """
    params = config.params
    center = np.asarray(config.room, dtype=float) / 2 + triangle_offsets(params.d).T
    center = center.T
    out = {s: {} for s in solvers}
    used = {}
    prev = np.asarray(init_vertices, dtype=float)
    for ep in epochs:
        beacons, ranges = config.beacons, ep.ranges
        if config.gating == "oracle":
            beacons, ranges = ranges.gated(beacons)
        if beacons.count < 3:
            for s in solvers:
                out[s][ep.k] = None
            continue
        start = prev if _inside(prev, config.room) else center
        gn = gn_solve(beacons, ranges, start, config.solver).P
        prev = gn
        used[ep.k] = (beacons, gn)
        if "gn" in out:
            out["gn"][ep.k] = gn
        if "rsd" in out or "rtr" in out:
            P0 = retract_nearest(gn, params)
            if "rsd" in out:
                out["rsd"][ep.k] = rsd_solve(beacons, ranges, P0, params, config.solver).P
            if "rtr" in out:
                out["rtr"][ep.k] = rtr_solve(beacons, ranges, P0, params, config.solver).P
    return out, used


def _receiver_variances(P, B, sigma_d, floor, mode):
    """(3, 3) array: row ``i`` holds receiver ``i``'s coordinate variances."""
    s2 = max(sigma_d, floor) ** 2
    if mode == "fixed":
        return np.full((3, 3), s2)
    out = np.empty((3, 3))
    for i in range(3):
        U = P[:, i][None, :] - B
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        try:
            cov = np.linalg.inv(U.T @ U)
        except np.linalg.LinAlgError as exc:
            raise SingularNormalEquations(f"receiver {i + 1}: beacon geometry is singular") from exc
        out[i] = np.maximum(s2 * np.diag(cov), floor**2)
    return out


def run_pipeline(traj: Trajectory, imu: ImuStream, epochs, config: PipelineConfig) -> dict:
    """Estimate the trajectory with every configured algorithm.

    Each algorithm predicts at every IMU sample and, at acoustic epochs with
    a usable fix, updates (and for the orientation filters projects onto the
    manifold).  ``lkf-gn``/``lkf-rtr`` are the position-only Kalman filter
    fed by the centroid of the Gauss-Newton / trust-region fix, the same
    computation as ``pc-gn``/``pc-rtr``.

    Returns
    -------
    dict
        Algorithm name to :class:`Track` aligned with ``traj.t``.
    """
    if len(imu) != len(traj) - 1:
        raise MisalignedTracks(f"{len(imu)} IMU samples for {len(traj)} trajectory samples")
    if not np.allclose(imu.t, traj.t[:-1], rtol=0, atol=1e-9):
        raise MisalignedTracks("IMU timestamps do not match the trajectory grid")
    params = config.params
    offs = GeometryOffsets.equilateral(params.d)
    n = config.noise
    sa = max(n.sigma_a, config.sigma_a_floor)
    sw = max(n.sigma_omega, config.sigma_omega_floor)
    init = initial_state(
        traj.p[0], traj.v[0], traj.C[0], config.init_sigma_p, config.init_sigma_v, config.init_sigma_c
    )
    solvers = sorted({_solver_of(a) for a in config.algorithms} | {"gn"})
    try:
        fixes, used = _localize_cached(epochs, vertices_from_pose(traj.pose(0), params), config, solvers)
        var = {
            k: _receiver_variances(gn, b.B, n.sigma_d, config.sigma_d_floor, config.r_mode)
            for k, (b, gn) in used.items()
        }
    except RimFusionError as exc:
        raise RuntimeFailure(f"localization failed: {exc}", ",".join(config.algorithms)) from exc
    tracks = {}
    for alg in config.algorithms:
        try:
            tracks[alg] = _run_filter(alg, traj, imu, fixes[_solver_of(alg)], var, init, offs, sa, sw, config)
        except RimFusionError as exc:
            raise RuntimeFailure(str(exc), alg) from exc
    return tracks


def _run_filter(alg, traj, imu, fix, var, init, offs, sa, sw, config):
    """One algorithm's filter over the whole stream; ``fix`` maps sample index to vertices."""
    params = config.params
    D = offs.D
    dt = traj.dt
    fam = alg.split("-")[0]
    X = np.empty((len(traj), STATE_DIM))
    X[0] = init.x
    if fam in ("ekf", "ukf"):
        flt = OrientationFilter(
            fam, init, ProcessNoise(sa, sw), offs, params, config.project, UkfParams(config.ukf_alpha), config.g
        )
        for k in range(len(imu)):
            flt.predict(imu.accel[k], imu.gyro[k], dt, bool(imu.free[k]))
            P = fix.get(k + 1)
            if P is not None:
                flt.update(P, np.diag(var[k + 1].reshape(-1)))
            X[k + 1] = flt.state.x
    else:
        flt = PositionFilter.from_state(init, sa, config.g)
        for k in range(len(imu)):
            flt.predict(imu.accel[k], imu.gyro[k], dt, bool(imu.free[k]))
            P = fix.get(k + 1)
            if P is not None:
                vv = var[k + 1]
                if alg == "1rx":
                    flt.update(P[:, 0] - flt.C @ D[:, 0], vv[0])
                else:
                    flt.update(P.mean(axis=1), vv.sum(axis=0) / 9.0)
            X[k + 1, 0:6] = flt.x
            X[k + 1, 6:15] = vec(flt.C)
    return Track(traj.t.copy(), X)


# ---------------------------------------------------------------- metrics


def euler_to_rotation(yaw, pitch, roll, degrees: bool = True) -> np.ndarray:
    """Z-Y-X rotation ``Rz(yaw) Ry(pitch) Rx(roll)``; vectorized over inputs."""
    y, p, r = (np.asarray(v, dtype=float) for v in (yaw, pitch, roll))
    if degrees:
        y, p, r = np.radians(y), np.radians(p), np.radians(r)
    cy, sy, cp, sp, cr, sr = np.cos(y), np.sin(y), np.cos(p), np.sin(p), np.cos(r), np.sin(r)
    C = np.stack(
        [
            np.stack([cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr], axis=-1),
            np.stack([sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr], axis=-1),
            np.stack([-sp, cp * sr, cp * cr], axis=-1),
        ],
        axis=-2,
    )
    return C


def rotation_to_euler(C, gimbal_tol: float = 1e-12):
    """Z-Y-X angles ``(yaw, pitch, roll)`` in degrees.

    Accepts one matrix or a stack.  At gimbal lock roll is set to zero and
    the combined rotation is reported as yaw.
    """
    C = np.asarray(C, dtype=float)
    single = C.ndim == 2
    C = C.reshape(-1, 3, 3)
    s = np.clip(-C[:, 2, 0], -1.0, 1.0)
    pitch = np.arcsin(s)
    lock = np.abs(s) >= 1.0 - gimbal_tol
    yaw = np.arctan2(C[:, 1, 0], C[:, 0, 0])
    roll = np.arctan2(C[:, 2, 1], C[:, 2, 2])
    yaw[lock] = np.arctan2(-C[lock, 0, 1], C[lock, 1, 1])
    roll[lock] = 0.0
    out = np.degrees(np.stack([yaw, pitch, roll], axis=-1))
    return tuple(out[0]) if single else out


def nearest_rotation(C) -> np.ndarray:
    """Closest rotation in Frobenius norm (polar factor); works on stacks."""
    U, _, Vt = np.linalg.svd(np.asarray(C, dtype=float))
    sign = np.sign(np.linalg.det(U @ Vt))
    U[..., :, -1] *= sign[..., None]
    return U @ Vt


def _wrap_deg(a):
    return (np.asarray(a) + 180.0) % 360.0 - 180.0


def _cdf(errors, step=1e-3, span=1.0):
    """Empirical CDF on a ``step`` grid up to ``span`` plus the maximum."""
    e = np.sort(np.asarray(errors, dtype=float).reshape(-1))
    top = float(e[-1]) if e.size else 0.0
    grid = np.arange(int(math.floor(min(top, span) / step)) + 1) * step
    if grid[-1] < top:
        grid = np.append(grid, top)
    frac = np.searchsorted(e, grid, side="right") / max(e.size, 1)
    return grid, frac


@dataclass(frozen=True)
class MetricsReport:
    """Accuracy of one estimated track.

    Attributes
    ----------
    errors : (N, 3) array
        Per-sample Euclidean error of each vertex, m.
    rmse : (3,) array
        Per-vertex RMSE, m.
    rmse_avg : float
        Mean of ``rmse``.
    euler_rmse : (3,) array
        Yaw, pitch and roll RMSE, degrees.
    cdf_error, cdf_fraction : arrays
        CDF of the per-sample mean vertex error.
    cdf_pooled_error, cdf_pooled_fraction : arrays
        CDF of all vertex errors pooled together.
    """

    errors: np.ndarray
    rmse: np.ndarray
    rmse_avg: float
    euler_rmse: np.ndarray
    euler_errors: np.ndarray
    cdf_error: np.ndarray
    cdf_fraction: np.ndarray
    cdf_pooled_error: np.ndarray
    cdf_pooled_fraction: np.ndarray

    def fraction_below(self, x: float) -> float:
        """Share of samples whose mean vertex error is at most ``x``."""
        return float(np.mean(self.errors.mean(axis=1) <= x))

    def window_rmse(self, mask) -> float:
        """Averaged vertex RMSE over the samples selected by ``mask``."""
        e = self.errors[np.asarray(mask, dtype=bool)]
        return float(np.sqrt(np.mean(e * e, axis=0)).mean())


def compute_metrics(truth: Trajectory, track: Track, params: ManifoldParams) -> MetricsReport:
    """Vertex, CDF and Euler-angle accuracy of ``track`` against ``truth``.

    Raises
    ------
    MisalignedTracks
        If the two tracks do not share timestamps.
    """
    if truth.t.shape != track.t.shape or not np.allclose(truth.t, track.t, rtol=0, atol=1e-9):
        raise MisalignedTracks(f"truth has {truth.t.size} samples, estimate {track.t.size}")
    err = np.linalg.norm(track.vertices(params) - truth.vertices(params), axis=1)
    rmse = np.sqrt(np.mean(err * err, axis=0))
    e_true = rotation_to_euler(truth.C)
    e_est = rotation_to_euler(nearest_rotation(track.C))
    de = _wrap_deg(e_est - e_true)
    ce, cf = _cdf(err.mean(axis=1))
    pe, pf = _cdf(err)
    return MetricsReport(
        err, rmse, float(rmse.mean()), np.sqrt(np.mean(de * de, axis=0)), de, ce, cf, pe, pf
    )
