"""End-to-end Monte Carlo experiments: simulate, reconstruct, aggregate.

The default protocol mirrors the five-setting demonstration: five analyzers
tilted 60 degrees from +z at azimuths 72 degrees apart, 20 particles per
setting, a pure north-pole truth, and 10 repetitions. Reports are pure
functions of their configuration; repetitions run on independent derived
seeds, so thread counts never change the output.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .algebra import born_probability, polarization_vector, unit_direction
from .estimator import ReconstructionResult, SolverOptions, grid_oracle, maxlik_fixed_point
from .simulate import (
    MeasurementRecord,
    MeasurementSetting,
    derive_seed,
    record_from_dict,
    record_to_dict,
    simulate_campaign,
)

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "BarTriple",
    "Repetition",
    "default_directions",
    "bar_triples",
    "run_experiment",
    "repetition_statistics",
    "report_to_dict",
    "write_report_json",
    "write_bars_csv",
    "write_states_csv",
]

BARS_CSV_COLUMNS = ("repetition", "setting", "sign", "p_true", "p_empirical", "p_reconstructed")
STATES_CSV_COLUMNS = ("repetition", "r1", "r2", "r3", "converged", "boundary", "log_likelihood")


def default_directions() -> tuple[tuple[float, float, float], ...]:
    """Five unit analyzers at polar angle 60 deg, azimuths 0, 72, ..., 288 deg."""
    polar = np.deg2rad(60.0)
    out = []
    for k in range(5):
        azimuth = 2.0 * np.pi * k / 5.0
        v = unit_direction((
            np.sin(polar) * np.cos(azimuth),
            np.sin(polar) * np.sin(azimuth),
            np.cos(polar),
        ))
        out.append((float(v[0]), float(v[1]), float(v[2])))
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of a repeated Stern-Gerlach experiment."""

    directions: tuple[tuple[float, float, float], ...]
    n_particles: int
    r_true: tuple[float, float, float]
    repetitions: int = 1
    seed: int = 0
    solver: SolverOptions = SolverOptions()
    grid_check: float | None = None

    def __post_init__(self):
        if len(self.directions) < 1:
            raise ValueError("at least one analyzer direction is required")
        normalized = tuple(
            tuple(float(c) for c in unit_direction(d)) for d in self.directions
        )
        object.__setattr__(self, "directions", normalized)
        if not isinstance(self.n_particles, (int, np.integer)) or self.n_particles < 1:
            raise ValueError(f"n_particles must be a positive integer, got {self.n_particles!r}")
        object.__setattr__(self, "n_particles", int(self.n_particles))
        rv = polarization_vector(self.r_true)
        object.__setattr__(self, "r_true", (float(rv[0]), float(rv[1]), float(rv[2])))
        if not isinstance(self.repetitions, (int, np.integer)) or self.repetitions < 1:
            raise ValueError(f"repetitions must be a positive integer, got {self.repetitions!r}")
        object.__setattr__(self, "repetitions", int(self.repetitions))
        if self.grid_check is not None and not (0.0 < float(self.grid_check) <= 0.5):
            raise ValueError(f"grid_check must lie in (0, 0.5], got {self.grid_check!r}")

    def settings(self) -> list[MeasurementSetting]:
        return [MeasurementSetting(direction=d, n_particles=self.n_particles) for d in self.directions]

    def to_dict(self) -> dict:
        data = {
            "directions": [list(d) for d in self.directions],
            "n_particles": self.n_particles,
            "r_true": list(self.r_true),
            "repetitions": self.repetitions,
            "seed": self.seed,
            "solver": {
                "tol_k": self.solver.tol_k,
                "max_iterations": self.solver.max_iterations,
                "damping_min": self.solver.damping_min,
                "ball_margin": self.solver.ball_margin,
            },
        }
        if self.grid_check is not None:
            data["grid_check"] = self.grid_check
        return data


@dataclass(frozen=True)
class BarTriple:
    """One bar group of the three-bar comparison: true, counted, reconstructed.

    The minus-sign triple is built as the exact complement of the plus-sign
    one, so p(+) + p(-) == 1 holds bit-exactly for all three bar types.
    """

    setting_index: int
    sign: int
    p_true: float
    p_empirical: float
    p_reconstructed: float

    def to_dict(self) -> dict:
        return {
            "setting": self.setting_index,
            "sign": self.sign,
            "p_true": self.p_true,
            "p_empirical": self.p_empirical,
            "p_reconstructed": self.p_reconstructed,
        }


@dataclass(frozen=True)
class Repetition:
    """Everything produced by one repetition of the protocol."""

    records: tuple[MeasurementRecord, ...]
    reconstruction: ReconstructionResult
    bars: tuple[BarTriple, ...]
    oracle_r: tuple[float, float, float] | None = None
    oracle_distance: float | None = None


@dataclass(frozen=True)
class ExperimentReport:
    config: ExperimentConfig
    per_repetition: tuple[Repetition, ...]
    summary: dict


def bar_triples(r_true, record: MeasurementRecord, r_est,
                setting_index: int = 0) -> tuple[BarTriple, BarTriple]:
    """The (plus, minus) bar pair for one setting of one repetition."""
    direction = record.setting.direction
    p_true = born_probability(r_true, direction, +1)
    p_emp = record.n_plus / record.setting.n_particles
    p_rec = born_probability(r_est, direction, +1)
    plus = BarTriple(setting_index, +1, p_true, p_emp, p_rec)
    minus = BarTriple(setting_index, -1, 1.0 - p_true, 1.0 - p_emp, 1.0 - p_rec)
    return plus, minus


def _run_one(config: ExperimentConfig, settings, index: int) -> Repetition:
    rep_seed = derive_seed(config.seed, index)
    records = simulate_campaign(config.r_true, settings, rep_seed)
    recon = maxlik_fixed_point(records, config.solver)
    bars = []
    for j, rec in enumerate(records):
        bars.extend(bar_triples(config.r_true, rec, recon.r_est, setting_index=j))
    oracle_r = None
    oracle_distance = None
    if config.grid_check is not None:
        best = grid_oracle(records, config.grid_check)
        oracle_r = (float(best[0]), float(best[1]), float(best[2]))
        oracle_distance = float(np.linalg.norm(np.asarray(recon.r_est) - best))
    return Repetition(
        records=tuple(records),
        reconstruction=recon,
        bars=tuple(bars),
        oracle_r=oracle_r,
        oracle_distance=oracle_distance,
    )


def run_experiment(config: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Simulate and reconstruct `repetitions` independent campaigns.

    Deterministic given the config: repetition i draws from the stream
    hashed from (seed, i), and aggregation runs in repetition order, so the
    report is byte-identical for any thread count.
    """
    settings = config.settings()
    indices = range(config.repetitions)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reps = list(pool.map(lambda i: _run_one(config, settings, i), indices))
    else:
        reps = [_run_one(config, settings, i) for i in indices]

    r_true = np.asarray(config.r_true)
    estimates = np.array([rep.reconstruction.r_est for rep in reps])
    errors = np.linalg.norm(estimates - r_true, axis=1)
    summary = {
        "mean_r_est": [float(c) for c in estimates.mean(axis=0)],
        "mean_abs_error": float(errors.mean()),
        "rms_error": float(np.sqrt(np.mean(errors**2))),
        "fraction_boundary": float(np.mean([rep.reconstruction.boundary for rep in reps])),
        "fraction_converged": float(np.mean([rep.reconstruction.converged for rep in reps])),
    }
    return ExperimentReport(config=config, per_repetition=tuple(reps), summary=summary)


def repetition_statistics(reports) -> dict:
    """Pooled per-setting frequency spread and reconstruction-error summary.

    Accepts one report or a sequence sharing the same direction set and true
    state. With fewer than two pooled repetitions the frequency standard
    deviations are undefined and reported as None.
    """
    if isinstance(reports, ExperimentReport):
        reports = [reports]
    reports = list(reports)
    if not reports:
        raise ValueError("at least one experiment report is required")
    config = reports[0].config
    for other in reports[1:]:
        if other.config.directions != config.directions or other.config.r_true != config.r_true:
            raise ValueError("reports must share directions and true state to be pooled")

    reps = [rep for report in reports for rep in report.per_repetition]
    frequencies = np.array([[rec.x for rec in rep.records] for rep in reps])
    estimates = np.array([rep.reconstruction.r_est for rep in reps])
    errors = np.linalg.norm(estimates - np.asarray(config.r_true), axis=1)
    if len(reps) >= 2:
        x_std = [float(s) for s in frequencies.std(axis=0, ddof=1)]
    else:
        x_std = None
    return {
        "n_repetitions": len(reps),
        "per_setting_x_std": x_std,
        "mean_error": float(errors.mean()),
        "rms_error": float(np.sqrt(np.mean(errors**2))),
        "boundary_fraction": float(np.mean([rep.reconstruction.boundary for rep in reps])),
        "converged_fraction": float(np.mean([rep.reconstruction.converged for rep in reps])),
    }


def report_to_dict(report: ExperimentReport) -> dict:
    per_repetition = []
    for rep in report.per_repetition:
        entry = {
            "records": [record_to_dict(rec) for rec in rep.records],
            "reconstruction": rep.reconstruction.to_json_dict(),
            "bars": [bar.to_dict() for bar in rep.bars],
        }
        if rep.oracle_r is not None:
            entry["oracle"] = {"r_oracle": list(rep.oracle_r), "distance": rep.oracle_distance}
        per_repetition.append(entry)
    return {
        "config": report.config.to_dict(),
        "summary": report.summary,
        "per_repetition": per_repetition,
    }


def write_report_json(report: ExperimentReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, indent=2)
        fh.write("\n")


def write_bars_csv(report: ExperimentReport, path) -> None:
    """Flat bar table: the data behind the left panels of the protocol figure."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BARS_CSV_COLUMNS)
        for i, rep in enumerate(report.per_repetition):
            for bar in rep.bars:
                writer.writerow([i, bar.setting_index, bar.sign, repr(bar.p_true),
                                 repr(bar.p_empirical), repr(bar.p_reconstructed)])


def write_states_csv(report: ExperimentReport, path) -> None:
    """Reconstructed states per repetition: the right-panel scatter data."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATES_CSV_COLUMNS)
        for i, rep in enumerate(report.per_repetition):
            recon = rep.reconstruction
            writer.writerow([i, repr(recon.r_est[0]), repr(recon.r_est[1]), repr(recon.r_est[2]),
                             int(recon.converged), int(recon.boundary), repr(recon.log_likelihood)])
