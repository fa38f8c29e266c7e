"""Execute runs and sweeps described by an :class:`ExperimentConfig`."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import __version__
from ..scenario import SpeedProfile, compute_metrics, generate_trajectory, run_pipeline, synthesize_imu, synthesize_ranges
from .config import ExperimentConfig, manifest_dict
from .io import (
    CDF_HEADER,
    METRICS_HEADER,
    SWEEP_HEADER,
    fmt,
    write_imu_csv,
    write_ranges_csv,
    write_rows,
    write_state_track,
    write_track_csv,
)

__all__ = ["CDF_GRID", "SeedResult", "run_seed", "simulate", "run_experiment", "run_sweep"]

CDF_GRID = np.round(np.arange(1001) * 1e-3, 6)


@dataclass
class SeedResult:
    seed: int
    tracks: dict
    metrics: dict
    imu: object
    epochs: list


def _trajectory(cfg: ExperimentConfig):
    return generate_trajectory(
        cfg.waypoints,
        duration=cfg.duration,
        rate=cfg.imu_rate,
        speed=SpeedProfile(cruise=cfg.cruise_speed),
        closed=cfg.closed,
    )


def run_seed(cfg: ExperimentConfig, seed: int, traj=None) -> SeedResult:
    """Synthesize inputs for one seed and run every configured algorithm."""
    traj = _trajectory(cfg) if traj is None else traj
    params = cfg.manifold_params()
    noise = cfg.noise_spec(seed)
    imu = synthesize_imu(traj, noise, free=cfg.free_acceleration)
    epochs = synthesize_ranges(
        traj, cfg.beacon_set(), params, noise, cfg.nlos_spec(), rate=cfg.acoustic_rate, room=cfg.room
    )
    tracks = run_pipeline(traj, imu, epochs, cfg.pipeline_config(seed))
    metrics = {alg: compute_metrics(traj, tr, params) for alg, tr in tracks.items()}
    return SeedResult(seed, tracks, metrics, imu, epochs)


def _seed_job(args):
    return run_seed(*args)


def simulate(cfg: ExperimentConfig, workers: int = 1) -> tuple:
    """Run every seed of ``cfg``, concurrently when ``workers > 1``.

    Returns
    -------
    traj : Trajectory
    results : list of SeedResult, in seed order
    """
    traj = _trajectory(cfg)
    seeds = cfg.seed_list
    workers = max(1, min(workers, len(seeds)))
    if workers == 1:
        return traj, [run_seed(cfg, s, traj) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return traj, list(ex.map(_seed_job, [(cfg, s) for s in seeds]))


def _cdf_on_grid(errors) -> np.ndarray:
    e = np.sort(np.asarray(errors).mean(axis=1))
    return np.searchsorted(e, CDF_GRID, side="right") / e.size


def metrics_rows(results):
    for res in results:
        for alg, m in res.metrics.items():
            yield [alg, res.seed, *m.rmse, m.rmse_avg, *m.euler_rmse]


def cdf_rows(cfg, results):
    for alg in cfg.algorithms:
        frac = np.mean([_cdf_on_grid(r.metrics[alg].errors) for r in results], axis=0)
        for x, f in zip(CDF_GRID, frac):
            yield [alg, x, f]


def run_experiment(cfg: ExperimentConfig, out_dir, dump_inputs: bool = False, workers: int = 1) -> list:
    """Run one configuration and write its output files.

    Files written to ``out_dir``: ``truth.csv``, ``track_<alg>.csv`` (with a
    ``_seed<k>`` suffix when several seeds run), ``metrics.csv``, ``cdf.csv``
    and ``manifest.json``.  With ``dump_inputs`` the synthesized
    ``imu_seed<k>.csv`` and ``ranges_seed<k>.csv`` are added.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traj, results = simulate(cfg, workers)
    write_track_csv(out / "truth.csv", traj.t, traj.p, traj.v, traj.C)
    many = len(results) > 1
    for res in results:
        for alg, tr in res.tracks.items():
            name = f"track_{alg}_seed{res.seed}.csv" if many else f"track_{alg}.csv"
            write_state_track(out / name, tr)
        if dump_inputs:
            write_imu_csv(out / f"imu_seed{res.seed}.csv", res.imu)
            write_ranges_csv(out / f"ranges_seed{res.seed}.csv", res.epochs)
    write_rows(out / "metrics.csv", METRICS_HEADER, metrics_rows(results))
    write_rows(out / "cdf.csv", CDF_HEADER, cdf_rows(cfg, results))
    write_manifest(out / "manifest.json", cfg)
    return results


def write_manifest(path, cfg: ExperimentConfig) -> None:
    Path(path).write_text(json.dumps(manifest_dict(cfg, __version__), indent=2, sort_keys=True) + "\n")


def _sweep_point(args):
    cfg, out_dir = args
    results = run_experiment(cfg, out_dir)
    return [(alg, res.seed, res.metrics[alg].rmse_avg) for res in results for alg in cfg.algorithms]


def _point_dir(i, value):
    return f"point{i:02d}_{fmt(value)}"


def run_sweep(cfg: ExperimentConfig, out_dir, workers: int = 1) -> list:
    """Run every sweep point and write ``sweep.csv`` in long format.

    Each point gets its own subdirectory with the files of
    :func:`run_experiment`.  Rows are merged in sweep order regardless of
    the number of workers, so the output does not depend on scheduling.
    """
    if cfg.sweep_axis is None:
        raise ValueError("configuration has no sweep")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg.at_sweep_point(v), out / _point_dir(i, v)) for i, v in enumerate(cfg.sweep_values)]
    workers = max(1, min(workers, len(jobs)))
    if workers == 1:
        per_point = [_sweep_point(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            per_point = list(ex.map(_sweep_point, jobs))
    rows = [
        [cfg.sweep_axis, v, alg, seed, rmse]
        for v, point in zip(cfg.sweep_values, per_point)
        for alg, seed, rmse in point
    ]
    write_rows(out / "sweep.csv", SWEEP_HEADER, rows)
    write_manifest(out / "manifest.json", cfg)
    return rows
