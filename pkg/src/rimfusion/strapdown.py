"""Strapdown inertial mechanization with a direction-cosine matrix.

Orientation uses the first-order update ``C <- C + dt C skew(w)`` with no
hidden re-orthonormalization; :func:`renormalize` is available to callers
that want it.  Gravity is a constant ``g`` along the navigation-frame -z axis.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Iterator

import numpy as np

from .errors import NonMonotonicTimestamps
from .manifold import skew

__all__ = [
    "GRAVITY",
    "ImuSample",
    "ImuStream",
    "NavState",
    "InsParams",
    "orientation_step",
    "gravity_compensate",
    "kinematic_step",
    "ins_step",
    "dead_reckon",
    "renormalize",
]

GRAVITY = 9.80665


@dataclass(frozen=True)
class ImuSample:
    """One inertial sample.

    ``accel_body`` is free acceleration when ``is_free_acceleration`` is set
    and specific force (gravity included) otherwise.
    """

    t: float
    accel_body: np.ndarray
    gyro: np.ndarray
    is_free_acceleration: bool = True


@dataclass(frozen=True)
class ImuStream:
    """Columnar block of IMU samples.

    Attributes
    ----------
    t : (N,) array, seconds
    accel : (N, 3) array, m/s^2
    gyro : (N, 3) array, rad/s
    free : (N,) bool array
    """

    t: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray
    free: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        n = t.size
        accel = np.asarray(self.accel, dtype=float).reshape(n, 3)
        gyro = np.asarray(self.gyro, dtype=float).reshape(n, 3)
        free = np.broadcast_to(np.asarray(self.free, dtype=bool), (n,)).copy()
        if not (np.all(np.isfinite(accel)) and np.all(np.isfinite(gyro)) and np.all(np.isfinite(t))):
            raise ValueError("IMU samples must be finite")
        check_monotonic(t)
        for name, val in (("t", t), ("accel", accel), ("gyro", gyro), ("free", free)):
            object.__setattr__(self, name, val)

    def __len__(self):
        return self.t.size

    def __iter__(self) -> Iterator[ImuSample]:
        for k in range(len(self)):
            yield ImuSample(float(self.t[k]), self.accel[k], self.gyro[k], bool(self.free[k]))

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return ImuStream(self.t[idx], self.accel[idx], self.gyro[idx], self.free[idx])
        return ImuSample(float(self.t[idx]), self.accel[idx], self.gyro[idx], bool(self.free[idx]))

    @classmethod
    def from_samples(cls, samples: Iterable[ImuSample]) -> "ImuStream":
        samples = list(samples)
        if not samples:
            return cls(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=bool))
        return cls(
            np.array([s.t for s in samples]),
            np.array([s.accel_body for s in samples]),
            np.array([s.gyro for s in samples]),
            np.array([s.is_free_acceleration for s in samples]),
        )


@dataclass(frozen=True)
class NavState:
    """Position, velocity (navigation frame) and body-to-navigation DCM."""

    p: np.ndarray
    v: np.ndarray
    C: np.ndarray


@dataclass(frozen=True)
class InsParams:
    dt: float
    g: float = GRAVITY

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.g > 0:
            raise ValueError("g must be positive")


def check_monotonic(t) -> None:
    """Raise :class:`NonMonotonicTimestamps` unless ``t`` strictly increases."""
    t = np.asarray(t, dtype=float)
    bad = np.flatnonzero(np.diff(t) <= 0)
    if bad.size:
        k = int(bad[0]) + 1
        raise NonMonotonicTimestamps(f"timestamp {t[k]!r} at sample {k} does not increase", index=k)


def orientation_step(C, omega, dt: float) -> np.ndarray:
    """First-order DCM update ``C + dt C skew(omega)``."""
    C = np.asarray(C, dtype=float)
    return C + dt * (C @ skew(omega))


def gravity_compensate(C, accel_body, g: float = GRAVITY) -> np.ndarray:
    """Navigation-frame free acceleration from a specific-force reading."""
    a_n = np.asarray(C, dtype=float) @ np.asarray(accel_body, dtype=float)
    a_n[2] -= g
    return a_n


def kinematic_step(state: NavState, a_n, dt: float) -> NavState:
    """Constant-acceleration step using the pre-update velocity for position."""
    a_n = np.asarray(a_n, dtype=float)
    v = np.asarray(state.v, dtype=float)
    return replace(state, p=state.p + dt * v + 0.5 * dt * dt * a_n, v=v + dt * a_n)


def ins_step(state: NavState, sample: ImuSample, params: InsParams) -> NavState:
    """One mechanization step; acceleration is rotated with the pre-update C."""
    if sample.is_free_acceleration:
        a_n = np.asarray(state.C, dtype=float) @ np.asarray(sample.accel_body, dtype=float)
    else:
        a_n = gravity_compensate(state.C, sample.accel_body, params.g)
    nxt = kinematic_step(state, a_n, params.dt)
    return replace(nxt, C=orientation_step(state.C, sample.gyro, params.dt))


def dead_reckon(stream, init: NavState, params: InsParams) -> list[NavState]:
    """Fold :func:`ins_step` over a stream; one state per sample.

    Raises
    ------
    NonMonotonicTimestamps
        If sample times do not strictly increase.
    """
    samples = list(stream) if not isinstance(stream, ImuStream) else stream
    if not isinstance(samples, ImuStream):
        check_monotonic([s.t for s in samples])
    state = NavState(
        np.asarray(init.p, dtype=float), np.asarray(init.v, dtype=float), np.asarray(init.C, dtype=float)
    )
    out = []
    for s in samples:
        state = ins_step(state, s, params)
        out.append(state)
    return out


def renormalize(C) -> np.ndarray:
    """Re-orthonormalize a DCM by Gram-Schmidt on its columns."""
    C = np.asarray(C, dtype=float)
    x = C[:, 0] / np.linalg.norm(C[:, 0])
    y = C[:, 1] - (C[:, 1] @ x) * x
    y /= np.linalg.norm(y)
    return np.column_stack((x, y, np.cross(x, y)))
