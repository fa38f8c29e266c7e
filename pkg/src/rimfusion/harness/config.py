"""Experiment configuration: TOML schema, validation and manifest round trips.

All quantities are SI inside the package.  Keys ending in ``_cm`` are a
convenience for the centimetre-based noise levels common in the literature
(``sigma_a_cm`` in cm/s^2, ``sigma_d_cm`` in cm) and are converted at parse
time.  Unknown keys are rejected so that a typo cannot silently change a
sweep.

Schema (every table and key optional)::

    [room]
    size = [10.0, 5.0, 3.0]            # m
    beacons = [[0, 0, 3], ...]         # m, default: four upper corners

    [geometry]
    d = 0.2                            # triangle base, m
    apex_angle_cos = 0.5

    [rates]
    imu_hz = 100.0
    acoustic_hz = 10.0

    [trajectory]
    duration_s = 60.0
    cruise_speed = 1.4                 # m/s
    waypoints = [[2, 1.2, 1.2], ...]
    closed = true

    [noise]
    sigma_a = 0.5                      # or sigma_a_cm = 50
    sigma_omega = 0.5                  # rad/s
    sigma_d = 0.025                    # or sigma_d_cm = 2.5
    free_acceleration = true

    [nlos]
    beacon_index = 0                   # zero based
    t_start = 10.0
    duration = 3.0
    range_low = 0.5
    range_high = 11.58                 # default: room diagonal

    [run]
    algorithms = ["ekf-rtr", "ukf-rtr"]
    gating = "none"                    # or "oracle"
    seeds = 1
    seed_offset = 0
    r_mode = "geometry"                # or "fixed"

    [sweep]
    axis = "sigma_a"                   # sigma_a, sigma_omega, sigma_d, acoustic_rate
    values = [0.5, 1.5]                # SI, or values_cm for sigma_a / sigma_d
"""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..errors import ConfigError
from ..localization import BeaconSet, SolverOptions, corner_beacons
from ..manifold import ManifoldParams
from ..scenario import (
    ALGORITHMS,
    DEFAULT_LOOP,
    DEFAULT_ROOM,
    NlosSpec,
    NoiseSpec,
    PipelineConfig,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["SWEEP_AXES", "ExperimentConfig", "load_config", "parse_config", "load_manifest", "manifest_dict"]

SWEEP_AXES = ("sigma_a", "sigma_omega", "sigma_d", "acoustic_rate")
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce a run or sweep (SI units)."""

    room: tuple = DEFAULT_ROOM
    beacons: tuple | None = None
    d: float = 0.2
    apex_angle_cos: float = 0.5
    imu_rate: float = 100.0
    acoustic_rate: float = 10.0
    duration: float = 60.0
    cruise_speed: float = 1.4
    waypoints: tuple = DEFAULT_LOOP
    closed: bool = True
    sigma_a: float = 0.5
    sigma_omega: float = 0.5
    sigma_d: float = 0.025
    free_acceleration: bool = True
    nlos: dict | None = None
    algorithms: tuple = ("ekf-rtr",)
    gating: str = "none"
    seeds: int = 1
    seed_offset: int = 0
    r_mode: str = "geometry"
    sweep_axis: str | None = None
    sweep_values: tuple = field(default=())

    def __post_init__(self):
        for name in ("room", "waypoints", "algorithms", "sweep_values"):
            object.__setattr__(self, name, _tuplify(getattr(self, name)))
        if self.beacons is not None:
            object.__setattr__(self, "beacons", _tuplify(self.beacons))
        self.validate()

    def validate(self) -> None:
        if not (self.imu_rate > 0 and self.acoustic_rate > 0):
            raise ConfigError("rates must be positive")
        if self.acoustic_rate > self.imu_rate:
            raise ConfigError(f"acoustic rate {self.acoustic_rate} Hz exceeds IMU rate {self.imu_rate} Hz")
        rates = [self.acoustic_rate]
        if self.sweep_axis == "acoustic_rate":
            rates += list(self.sweep_values)
        for r in rates:
            ratio = self.imu_rate / r if r > 0 else 0.0
            if r <= 0 or r > self.imu_rate or abs(ratio - round(ratio)) > 1e-9:
                raise ConfigError(f"acoustic rate {r} Hz must divide the IMU rate {self.imu_rate} Hz")
        if not self.algorithms:
            raise ConfigError("algorithm list is empty")
        for alg in self.algorithms:
            if alg not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {alg!r}; choose from {', '.join(ALGORITHMS)}")
        if len(set(self.algorithms)) != len(self.algorithms):
            raise ConfigError("algorithm list has duplicates")
        if self.gating not in ("none", "oracle"):
            raise ConfigError(f"unknown gating mode {self.gating!r}")
        if self.r_mode not in ("geometry", "fixed"):
            raise ConfigError(f"unknown r_mode {self.r_mode!r}")
        if not isinstance(self.seeds, int) or self.seeds < 1:
            raise ConfigError("seeds must be a positive integer")
        if not isinstance(self.seed_offset, int) or self.seed_offset < 0:
            raise ConfigError("seed_offset must be a nonnegative integer")
        if min(self.sigma_a, self.sigma_omega, self.sigma_d) < 0:
            raise ConfigError("noise levels must be nonnegative")
        if not self.d > 0 or not 0 < self.apex_angle_cos < 1:
            raise ConfigError("need d > 0 and 0 < apex_angle_cos < 1")
        if not self.duration > 0:
            raise ConfigError("duration must be positive")
        if len(self.room) != 3 or min(self.room) <= 0:
            raise ConfigError("room size must be three positive lengths")
        if self.sweep_axis is not None:
            if self.sweep_axis not in SWEEP_AXES:
                raise ConfigError(f"unknown sweep axis {self.sweep_axis!r}; choose from {', '.join(SWEEP_AXES)}")
            if not self.sweep_values:
                raise ConfigError("sweep values are empty")

    # -- derived objects -------------------------------------------------

    @property
    def seed_list(self) -> list[int]:
        return [self.seed_offset + i for i in range(self.seeds)]

    def beacon_set(self) -> BeaconSet:
        return corner_beacons(self.room) if self.beacons is None else BeaconSet(self.beacons)

    def manifold_params(self) -> ManifoldParams:
        return ManifoldParams(self.d, self.apex_angle_cos)

    def noise_spec(self, seed: int) -> NoiseSpec:
        return NoiseSpec(self.sigma_a, self.sigma_omega, self.sigma_d, seed)

    def nlos_spec(self) -> NlosSpec | None:
        return None if self.nlos is None else NlosSpec(**self.nlos)

    def pipeline_config(self, seed: int) -> PipelineConfig:
        return PipelineConfig(
            params=self.manifold_params(),
            beacons=self.beacon_set(),
            room=tuple(self.room),
            algorithms=tuple(self.algorithms),
            gating=self.gating,
            noise=self.noise_spec(seed),
            solver=SolverOptions(),
            r_mode=self.r_mode,
        )

    def at_sweep_point(self, value: float) -> "ExperimentConfig":
        """Copy with the sweep axis set to ``value`` and the sweep removed."""
        key = "acoustic_rate" if self.sweep_axis == "acoustic_rate" else self.sweep_axis
        return replace(self, **{key: float(value)}, sweep_axis=None, sweep_values=())

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = _listify(v)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown manifest key {unknown[0]!r}")
        return cls(**data)


def _tuplify(v):
    if isinstance(v, (list, tuple)):
        return tuple(_tuplify(x) for x in v)
    return v


def _listify(v):
    if isinstance(v, (list, tuple)):
        return [_listify(x) for x in v]
    return v


_TABLES = {
    "room": {"size": "room", "beacons": "beacons"},
    "geometry": {"d": "d", "apex_angle_cos": "apex_angle_cos"},
    "rates": {"imu_hz": "imu_rate", "acoustic_hz": "acoustic_rate"},
    "trajectory": {
        "duration_s": "duration", "cruise_speed": "cruise_speed", "waypoints": "waypoints", "closed": "closed",
    },
    "noise": {
        "sigma_a": "sigma_a", "sigma_omega": "sigma_omega", "sigma_d": "sigma_d",
        "free_acceleration": "free_acceleration",
    },
    "run": {
        "algorithms": "algorithms", "gating": "gating", "seeds": "seeds", "seed_offset": "seed_offset",
        "r_mode": "r_mode",
    },
}
_CM_KEYS = {("noise", "sigma_a_cm"): "sigma_a", ("noise", "sigma_d_cm"): "sigma_d"}
_NLOS_KEYS = {"beacon_index", "t_start", "duration", "range_low", "range_high"}
_SWEEP_KEYS = {"axis", "values", "values_cm"}


def parse_config(doc: dict) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a parsed TOML document.

    Raises
    ------
    ConfigError
        On unknown tables or keys, conflicting unit variants, bad types or
        failed validation.
    """
    kw = {}
    for table, body in doc.items():
        if not isinstance(body, dict):
            raise ConfigError(f"top-level key {table!r} must be a table")
        if table == "nlos":
            bad = sorted(set(body) - _NLOS_KEYS)
            if bad:
                raise ConfigError(f"unknown key {bad[0]!r} in [nlos]")
            kw["nlos"] = {k: body[k] for k in sorted(body)}
            continue
        if table == "sweep":
            bad = sorted(set(body) - _SWEEP_KEYS)
            if bad:
                raise ConfigError(f"unknown key {bad[0]!r} in [sweep]")
            if "values" in body and "values_cm" in body:
                raise ConfigError("give either values or values_cm in [sweep]")
            axis = body.get("axis")
            values = body.get("values", body.get("values_cm", []))
            if "values_cm" in body:
                if axis not in ("sigma_a", "sigma_d"):
                    raise ConfigError("values_cm applies only to sigma_a and sigma_d sweeps")
                values = [v / 100.0 for v in values]
            kw["sweep_axis"] = axis
            kw["sweep_values"] = tuple(float(v) for v in values)
            continue
        if table not in _TABLES:
            raise ConfigError(f"unknown table [{table}]")
        keys = _TABLES[table]
        for key, value in body.items():
            cm = _CM_KEYS.get((table, key))
            if cm is not None:
                if cm in body:
                    raise ConfigError(f"give either {cm} or {key} in [{table}]")
                kw[cm] = float(value) / 100.0
            elif key in keys:
                kw[keys[key]] = value
            else:
                raise ConfigError(f"unknown key {key!r} in [{table}]")
    try:
        cfg = ExperimentConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.nlos is not None:
        try:
            cfg.nlos_spec()
        except TypeError as exc:
            raise ConfigError(f"bad [nlos] table: {exc}") from exc
    return cfg


def load_config(path) -> tuple[ExperimentConfig, dict | None]:
    """Load a TOML config or a run manifest (``.json``).

    Returns the config and, for manifests, the manifest dictionary.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if path.suffix == ".json":
        return load_manifest(raw)
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(doc), None


def manifest_dict(cfg: ExperimentConfig, version: str) -> dict:
    return {
        "manifest_version": MANIFEST_VERSION,
        "code_version": version,
        "seed_offset": cfg.seed_offset,
        "seeds": cfg.seed_list,
        "config": cfg.to_dict(),
    }


def load_manifest(raw) -> tuple[ExperimentConfig, dict]:
    try:
        data = json.loads(raw)
        cfg = ExperimentConfig.from_dict(data["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"malformed manifest: {exc}") from exc
    return cfg, data
