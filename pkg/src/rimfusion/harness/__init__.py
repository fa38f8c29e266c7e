"""Configuration, CSV persistence and the command line front end."""

from .config import SWEEP_AXES, ExperimentConfig, load_config, parse_config
from .io import read_imu_csv, read_ranges_csv, read_track_csv, write_imu_csv, write_ranges_csv, write_track_csv
from .runner import run_experiment, run_sweep, simulate

__all__ = [
    "SWEEP_AXES",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "read_imu_csv",
    "read_ranges_csv",
    "read_track_csv",
    "write_imu_csv",
    "write_ranges_csv",
    "write_track_csv",
    "run_experiment",
    "run_sweep",
    "simulate",
]
