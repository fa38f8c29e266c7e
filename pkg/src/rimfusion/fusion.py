"""EKF/UKF fusion of inertial data with vertex-position fixes.

The state is ``x = [p_c, v_c, vec(C)]`` (15 entries, ``vec`` stacks columns).
For fixed inputs the one-step propagation ``x' = F(a, w) x`` is linear in
``x``, and the measurement ``H x = [p_c + C d_i]_i`` is linear too, so the EKF
and UKF coincide up to rounding on this model.  After each measurement update
the vertices ``H x`` can be projected back onto the triangle manifold
(:func:`project_state`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ._core import kernels
from .errors import IndefiniteCovariance, SingularInnovation
from .localization import centroid_orientation, triangle_offsets
from .manifold import ManifoldParams, retract_nearest, skew
from .strapdown import GRAVITY, orientation_step

__all__ = [
    "STATE_DIM",
    "vec",
    "unvec",
    "FilterState",
    "ProcessNoise",
    "MeasurementNoise",
    "UkfParams",
    "GeometryOffsets",
    "initial_state",
    "state_transition",
    "measurement_matrix",
    "input_jacobian",
    "propagate",
    "ekf_predict",
    "ekf_update",
    "ukf_sigma_points",
    "ukf_predict",
    "ukf_update",
    "project_state",
    "OrientationFilter",
    "PositionFilter",
    "lkf_position_track",
]

STATE_DIM = 15
DEFAULT_JITTER = 1e-12


def vec(C) -> np.ndarray:
    """Column-major vectorization of a 3x3 matrix."""
    return np.asarray(C, dtype=float).reshape(9, order="F")


def unvec(c) -> np.ndarray:
    return np.asarray(c, dtype=float).reshape(3, 3, order="F")


def _sym(P):
    return 0.5 * (P + P.T)


@dataclass(frozen=True)
class FilterState:
    """Mean ``x`` and covariance ``P`` of the 15-dimensional state."""

    x: np.ndarray
    P: np.ndarray

    @property
    def p(self) -> np.ndarray:
        return self.x[0:3]

    @property
    def v(self) -> np.ndarray:
        return self.x[3:6]

    @property
    def C(self) -> np.ndarray:
        return unvec(self.x[6:15])


@dataclass(frozen=True)
class ProcessNoise:
    """Per-axis accelerometer and gyroscope standard deviations."""

    sigma_a: float | tuple = 0.0
    sigma_omega: float | tuple = 0.0

    @property
    def q(self) -> np.ndarray:
        """Diagonal of ``Q`` as a 6-vector."""
        sa = np.broadcast_to(np.asarray(self.sigma_a, dtype=float), (3,))
        sw = np.broadcast_to(np.asarray(self.sigma_omega, dtype=float), (3,))
        q = np.concatenate([sa, sw]) ** 2
        if np.any(q < 0) or not np.all(np.isfinite(q)):
            raise ValueError("process noise must be finite and nonnegative")
        return q

    @property
    def Q(self) -> np.ndarray:
        return np.diag(self.q)


@dataclass(frozen=True)
class MeasurementNoise:
    """Diagonal vertex-position noise ``R`` (9x9)."""

    diag: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.diag, dtype=float).reshape(-1)
        if np.any(d <= 0) or not np.all(np.isfinite(d)):
            raise ValueError("measurement variances must be positive")
        object.__setattr__(self, "diag", d)

    @classmethod
    def isotropic(cls, sigma: float, n: int = 9) -> "MeasurementNoise":
        return cls(np.full(n, float(sigma) ** 2))

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.diag)


@dataclass(frozen=True)
class UkfParams:
    """Sigma-point spread; ``kappa = (alpha^2 - 1) n``."""

    alpha_spread: float = 1.0
    n: int = STATE_DIM

    def __post_init__(self):
        if not self.alpha_spread > 0:
            raise ValueError("alpha_spread must be positive")

    @property
    def kappa(self) -> float:
        return (self.alpha_spread ** 2 - 1.0) * self.n

    def weights(self):
        """Mean and covariance weights, each of length ``2 n + 1``."""
        n, k = self.n, self.kappa
        wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + k)))
        wc = wm.copy()
        wm[0] = k / (n + k)
        wc[0] = k / (n + k) + 3.0 - self.alpha_spread ** 2
        return wm, wc


@dataclass(frozen=True)
class GeometryOffsets:
    """Body-frame centroid-to-vertex vectors, one per column of ``D``."""

    D: np.ndarray

    @classmethod
    def equilateral(cls, d: float) -> "GeometryOffsets":
        return cls(triangle_offsets(d))

    def vertex(self, i: int) -> np.ndarray:
        return self.D[:, i]


def initial_state(p, v, C, sigma_p=0.01, sigma_v=0.1, sigma_c=0.01) -> FilterState:
    """State with the default diagonal prior covariance."""
    x = np.concatenate([np.asarray(p, dtype=float), np.asarray(v, dtype=float), vec(C)])
    P = np.diag(np.concatenate([np.full(3, sigma_p ** 2), np.full(3, sigma_v ** 2), np.full(9, sigma_c ** 2)]))
    return FilterState(x, P)


def _vec3(a):
    return np.ascontiguousarray(a, dtype=np.float64).reshape(3)


def state_transition(a_b, omega, dt: float) -> np.ndarray:
    """15x15 transition for free body acceleration ``a_b`` and rate ``omega``."""
    return kernels.transition_matrix(_vec3(a_b), _vec3(omega), float(dt))


def measurement_matrix(offsets: GeometryOffsets) -> np.ndarray:
    """9x15 ``H`` with ``H x = [p + C d_1; p + C d_2; p + C d_3]``."""
    H = np.zeros((9, STATE_DIM))
    I3 = np.eye(3)
    for i in range(3):
        H[3 * i:3 * i + 3, 0:3] = I3
        H[3 * i:3 * i + 3, 6:15] = np.kron(offsets.D[:, i][None, :], I3)
    return H


def input_jacobian(a_b, omega, C, dt: float) -> np.ndarray:
    """15x6 Jacobian of the propagation with respect to ``(a_b, omega)``."""
    return kernels.input_jacobian(_vec3(a_b), _vec3(omega), np.ascontiguousarray(C, dtype=float), float(dt))


def propagate(x, a_b, omega, dt: float) -> np.ndarray:
    """Noise-free one-step propagation ``F(a, w) x``."""
    return state_transition(a_b, omega, dt) @ np.asarray(x, dtype=float)


def ekf_predict(state: FilterState, a_b, omega, q, dt: float, jitter: float = DEFAULT_JITTER) -> FilterState:
    """EKF time update ``x = F x``, ``P = F P F^T + F_u Q F_u^T``.

    ``q`` is the 6-vector diagonal of ``Q`` (or a :class:`ProcessNoise`).
    ``jitter`` is added to the orientation block of ``P``.
    """
    q = q.q if isinstance(q, ProcessNoise) else np.ascontiguousarray(q, dtype=float)
    x, P = kernels.ekf_predict(
        np.ascontiguousarray(state.x), np.ascontiguousarray(state.P), _vec3(a_b), _vec3(omega), q, float(dt), float(jitter)
    )
    return FilterState(x, P)


def _factor(S):
    try:
        return cho_factor(S, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularInnovation(f"innovation covariance is not positive definite: {exc}") from None


def ekf_update(state: FilterState, q_meas, H, R) -> FilterState:
    """Kalman measurement update with ``P = (I - K H) P`` symmetrized.

    Raises
    ------
    SingularInnovation
        If ``H P H^T + R`` cannot be Cholesky-factorized.
    """
    R = R.R if isinstance(R, MeasurementNoise) else np.asarray(R, dtype=float)
    PHt = state.P @ H.T
    S = _sym(H @ PHt + R)
    fac = _factor(S)
    K = cho_solve(fac, PHt.T).T
    x = state.x + K @ (np.asarray(q_meas, dtype=float) - H @ state.x)
    P = _sym((np.eye(state.x.size) - K @ H) @ state.P)
    return FilterState(x, P)


def ukf_sigma_points(state: FilterState, params: UkfParams = UkfParams()):
    """Sigma points (rows) and their mean/covariance weights.

    Returns
    -------
    chi : (2n+1, n) array
    wm, wc : (2n+1,) arrays

    Raises
    ------
    IndefiniteCovariance
        If ``P`` fails Cholesky even after adding ``1e-12 I``.
    """
    n = state.x.size
    P = _sym(state.P)
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        try:
            L = np.linalg.cholesky(P + 1e-12 * np.eye(n))
        except np.linalg.LinAlgError:
            raise IndefiniteCovariance("state covariance is not positive definite") from None
    scale = math.sqrt(n + params.kappa)
    chi = np.empty((2 * n + 1, n))
    chi[0] = state.x
    chi[1:n + 1] = state.x + scale * L.T
    chi[n + 1:] = state.x - scale * L.T
    wm, wc = params.weights()
    return chi, wm, wc


def ukf_predict(
    state: FilterState,
    a_b,
    omega,
    q,
    dt: float,
    params: UkfParams = UkfParams(),
    jitter: float = DEFAULT_JITTER,
    return_sigma_points: bool = False,
):
    """Unscented time update with the linearized input-noise term added."""
    q = q.q if isinstance(q, ProcessNoise) else np.asarray(q, dtype=float)
    chi, wm, wc = ukf_sigma_points(state, params)
    F = state_transition(a_b, omega, dt)
    chi_p = chi @ F.T
    x = wm @ chi_p
    dev = chi_p - x
    P = (dev.T * wc) @ dev
    Fu = input_jacobian(a_b, omega, state.C, dt)
    P += (Fu * q) @ Fu.T
    P[range(6, 15), range(6, 15)] += jitter
    out = FilterState(x, _sym(P))
    if return_sigma_points:
        return out, chi_p
    return out


def ukf_update(state: FilterState, q_meas, H, R, params: UkfParams = UkfParams()) -> FilterState:
    """Unscented measurement update; sigma points are drawn from ``state``.

    ``R`` is added to the predicted measurement covariance before inversion.
    """
    R = R.R if isinstance(R, MeasurementNoise) else np.asarray(R, dtype=float)
    chi, wm, wc = ukf_sigma_points(state, params)
    Yp = chi @ H.T
    y = wm @ Yp
    dy = Yp - y
    dx = chi - state.x
    Pq = _sym((dy.T * wc) @ dy + R)
    Pxq = (dx.T * wc) @ dy
    fac = _factor(Pq)
    K = cho_solve(fac, Pxq.T).T
    x = state.x + K @ (np.asarray(q_meas, dtype=float) - y)
    P = _sym(state.P - K @ Pq @ K.T)
    return FilterState(x, P)


def project_state(state: FilterState, offsets: GeometryOffsets, params: ManifoldParams) -> FilterState:
    """Snap the state's vertices onto the manifold and re-read the pose.

    Velocity and covariance are left untouched.
    """
    H = measurement_matrix(offsets)
    Z = (H @ state.x).reshape(3, 3, order="F")
    pose = centroid_orientation(retract_nearest(Z, params))
    x = state.x.copy()
    x[0:3] = pose.p
    x[6:15] = vec(pose.C)
    return FilterState(x, state.P)


def _free_accel(accel, C, free, g):
    if free:
        return np.asarray(accel, dtype=float)
    # remove gravity using the current orientation estimate
    return np.asarray(accel, dtype=float) - np.asarray(C).T @ np.array([0.0, 0.0, g])


@dataclass
class OrientationFilter:
    """EKF or UKF over the full 15-dimensional state.

    Parameters
    ----------
    kind : {'ekf', 'ukf'}
    state : FilterState
    noise : ProcessNoise
    offsets : GeometryOffsets
    params : ManifoldParams
    project : bool
        Project onto the manifold after every measurement update.
    """

    kind: str
    state: FilterState
    noise: ProcessNoise
    offsets: GeometryOffsets
    params: ManifoldParams
    project: bool = True
    ukf: UkfParams = field(default_factory=UkfParams)
    g: float = GRAVITY
    jitter: float = DEFAULT_JITTER

    def __post_init__(self):
        if self.kind not in ("ekf", "ukf"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        self._H = measurement_matrix(self.offsets)
        self._q = self.noise.q

    def predict(self, accel, gyro, dt: float, free: bool = True) -> FilterState:
        a = _free_accel(accel, self.state.C, free, self.g)
        if self.kind == "ekf":
            self.state = ekf_predict(self.state, a, gyro, self._q, dt, self.jitter)
        else:
            self.state = ukf_predict(self.state, a, gyro, self._q, dt, self.ukf, self.jitter)
        return self.state

    def update(self, vertices, R) -> FilterState:
        """Fuse a vertex fix; ``vertices`` is (3, 3) or its column-major 9-vector."""
        q = np.asarray(vertices, dtype=float)
        q = q.reshape(9, order="F") if q.shape == (3, 3) else q
        if self.kind == "ekf":
            self.state = ekf_update(self.state, q, self._H, R)
        else:
            self.state = ukf_update(self.state, q, self._H, R, self.ukf)
        if self.project:
            self.state = project_state(self.state, self.offsets, self.params)
        return self.state


@dataclass
class PositionFilter:
    """Six-state (position, velocity) linear Kalman filter.

    Orientation comes from pure inertial integration and is used only to
    rotate accelerations into the navigation frame.
    """

    x: np.ndarray
    P: np.ndarray
    C: np.ndarray
    sigma_a: float | tuple = 0.0
    g: float = GRAVITY

    @classmethod
    def from_state(cls, state: FilterState, sigma_a=0.0, g: float = GRAVITY) -> "PositionFilter":
        return cls(state.x[0:6].copy(), state.P[0:6, 0:6].copy(), state.C.copy(), sigma_a, g)

    def predict(self, accel, gyro, dt: float, free: bool = True):
        a_b = _free_accel(accel, self.C, free, self.g)
        a_n = self.C @ a_b
        # velocity row of F: dt C a + dt^2/2 C skew(w) a
        a_v = a_n + 0.5 * dt * (self.C @ (skew(gyro) @ a_b))
        A = np.eye(6)
        A[0:3, 3:6] = dt * np.eye(3)
        G = np.vstack([0.5 * dt * dt * self.C, dt * self.C])
        qa = np.broadcast_to(np.asarray(self.sigma_a, dtype=float), (3,)) ** 2
        self.x = A @ self.x + np.concatenate([0.5 * dt * dt * a_n, dt * a_v])
        self.P = _sym(A @ self.P @ A.T + (G * qa) @ G.T)
        self.C = orientation_step(self.C, gyro, dt)

    def update(self, p_meas, R):
        H = np.hstack([np.eye(3), np.zeros((3, 3))])
        R = np.asarray(R, dtype=float)
        R = np.diag(R) if R.ndim == 1 else R
        PHt = self.P @ H.T
        fac = _factor(_sym(H @ PHt + R))
        K = cho_solve(fac, PHt.T).T
        self.x = self.x + K @ (np.asarray(p_meas, dtype=float) - H @ self.x)
        self.P = _sym((np.eye(6) - K @ H) @ self.P)

    @property
    def state(self) -> FilterState:
        """Embed into the 15-state layout (orientation from the INS)."""
        P = np.zeros((STATE_DIM, STATE_DIM))
        P[0:6, 0:6] = self.P
        return FilterState(np.concatenate([self.x, vec(self.C)]), P)


def lkf_position_track(init: FilterState, imu, fixes, dt: float, sigma_a=0.0, g: float = GRAVITY):
    """Run :class:`PositionFilter` over an IMU stream.

    Parameters
    ----------
    init : FilterState
    imu : ImuStream
    fixes : dict
        Maps the index ``k + 1`` of the state after sample ``k`` to
        ``(centroid, R)`` pairs.
    dt : float

    Returns
    -------
    list of FilterState
        ``len(imu) + 1`` states, the first being ``init``.
    """
    flt = PositionFilter.from_state(init, sigma_a, g)
    out = [flt.state]
    for k in range(len(imu)):
        flt.predict(imu.accel[k], imu.gyro[k], dt, bool(imu.free[k]))
        fix = fixes.get(k + 1)
        if fix is not None:
            flt.update(*fix)
        out.append(flt.state)
    return out
