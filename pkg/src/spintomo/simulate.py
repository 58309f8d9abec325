"""Seeded Stern-Gerlach count simulation.

Randomness contract: every draw comes from a counter-based 64-bit Philox
generator keyed through numpy's SeedSequence by (seed, stream). Counts are
produced by inverse-CDF sampling of the binomial law, consuming exactly one
uniform per record, so identical seeds give bit-identical records on any
platform and under any execution order.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .algebra import UNIT_EPS, born_probability, polarization_vector, unit_direction

__all__ = [
    "MAX_SEED",
    "MeasurementSetting",
    "MeasurementRecord",
    "derive_rng",
    "derive_seed",
    "simulate_setting",
    "simulate_campaign",
    "sampling_rms",
    "record_to_dict",
    "record_from_dict",
    "records_to_json",
    "records_from_json",
    "write_records_json",
    "read_records_json",
    "write_records_csv",
    "read_records_csv",
]

MAX_SEED = 2**64 - 1

CSV_COLUMNS = ("a_x", "a_y", "a_z", "N", "n_plus", "n_minus", "x")


def _check_seed(seed) -> int:
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
        raise ValueError(f"seed must be an integer, got {seed!r}")
    if not 0 <= int(seed) <= MAX_SEED:
        raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return int(seed)


def derive_rng(seed, *path) -> np.random.Generator:
    """Philox generator on the stream keyed by (seed, *path)."""
    entropy = (_check_seed(seed),) + tuple(int(p) for p in path)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed, *path) -> int:
    """Deterministic 64-bit child seed hashed from (seed, *path)."""
    entropy = (_check_seed(seed),) + tuple(int(p) for p in path)
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class MeasurementSetting:
    """Analyzer direction plus the particle budget spent on it."""

    direction: tuple[float, float, float]
    n_particles: int

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (3,) or not np.all(np.isfinite(d)):
            raise ValueError(f"direction must be a finite 3-vector, got {self.direction!r}")
        if abs(float(np.linalg.norm(d)) - 1.0) > UNIT_EPS:
            raise ValueError(
                f"direction {self.direction!r} is not unit norm; "
                "build settings with MeasurementSetting.from_vector"
            )
        object.__setattr__(self, "direction", (float(d[0]), float(d[1]), float(d[2])))
        if not isinstance(self.n_particles, (int, np.integer)) or self.n_particles < 1:
            raise ValueError(f"n_particles must be a positive integer, got {self.n_particles!r}")
        object.__setattr__(self, "n_particles", int(self.n_particles))

    @classmethod
    def from_vector(cls, a, n_particles: int) -> "MeasurementSetting":
        """Normalize a raw vector and attach a particle budget."""
        v = unit_direction(a)
        return cls(direction=(float(v[0]), float(v[1]), float(v[2])), n_particles=n_particles)


@dataclass(frozen=True)
class MeasurementRecord:
    """Observed counts for one setting, with signed frequency x = (n+ - n-)/N."""

    setting: MeasurementSetting
    n_plus: int
    n_minus: int
    x: float

    def __post_init__(self):
        for name in ("n_plus", "n_minus"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        n = self.setting.n_particles
        if self.n_plus + self.n_minus != n:
            raise ValueError(
                f"counts {self.n_plus}+{self.n_minus} do not sum to n_particles={n}"
            )
        if self.x != (self.n_plus - self.n_minus) / n:
            raise ValueError(f"x={self.x!r} inconsistent with counts ({self.n_plus}, {self.n_minus})")

    @classmethod
    def from_counts(cls, setting: MeasurementSetting, n_plus: int) -> "MeasurementRecord":
        n_plus = int(n_plus)
        n_minus = setting.n_particles - n_plus
        x = (n_plus - n_minus) / setting.n_particles
        return cls(setting=setting, n_plus=n_plus, n_minus=n_minus, x=x)


def _binomial_inverse_cdf(u: float, n: int, p: float) -> int:
    """Smallest k with Binomial(n, p) CDF(k) >= u; degenerate p handled exactly."""
    if p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    k = int(stats.binom.ppf(u, n, p))
    return min(max(k, 0), n)


def simulate_setting(r_true, setting: MeasurementSetting, seed, stream: int = 0) -> MeasurementRecord:
    """Draw one record with n_plus ~ Binomial(N, (1 + r.a)/2) on stream (seed, stream)."""
    rv = polarization_vector(r_true)
    p = born_probability(rv, setting.direction, +1)
    u = derive_rng(seed, stream).random()
    return MeasurementRecord.from_counts(setting, _binomial_inverse_cdf(u, setting.n_particles, p))


def simulate_campaign(r_true, settings, seed) -> list[MeasurementRecord]:
    """One record per setting, setting j drawn on stream (seed, j).

    Stream derivation makes the output independent of evaluation order, so
    campaigns can be generated concurrently without changing results.
    """
    settings = list(settings)
    if not settings:
        raise ValueError("campaign needs at least one measurement setting")
    rv = polarization_vector(r_true)
    return [simulate_setting(rv, s, seed, stream=j) for j, s in enumerate(settings)]


def sampling_rms(r, a, n_particles: int) -> float:
    """Predicted standard deviation sqrt(N (1 - (r.a)^2)) / 2 of either count.

    Equals the binomial sigma sqrt(N p (1-p)) with p = (1 + r.a)/2.
    """
    rv = polarization_vector(r)
    av = unit_direction(a)
    if not isinstance(n_particles, (int, np.integer)) or n_particles < 1:
        raise ValueError(f"n_particles must be a positive integer, got {n_particles!r}")
    u = float(rv @ av)
    return float(np.sqrt(n_particles * max(0.0, 1.0 - u * u)) / 2.0)


def record_to_dict(record: MeasurementRecord) -> dict:
    return {
        "a": list(record.setting.direction),
        "N": record.setting.n_particles,
        "n_plus": record.n_plus,
        "n_minus": record.n_minus,
        "x": record.x,
    }


def record_from_dict(data: dict) -> MeasurementRecord:
    required = {"a", "N", "n_plus", "n_minus", "x"}
    if set(data) != required:
        raise ValueError(f"record keys {sorted(data)} do not match {sorted(required)}")
    setting = MeasurementSetting(direction=tuple(float(c) for c in data["a"]), n_particles=data["N"])
    return MeasurementRecord(
        setting=setting,
        n_plus=data["n_plus"],
        n_minus=data["n_minus"],
        x=float(data["x"]),
    )


def records_to_json(records) -> str:
    return json.dumps([record_to_dict(r) for r in records], indent=2) + "\n"


def records_from_json(text: str) -> list[MeasurementRecord]:
    data = json.loads(text)
    if not isinstance(data, list):
        raise ValueError("records JSON must be a list of record objects")
    return [record_from_dict(d) for d in data]


def write_records_json(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(records_to_json(records))


def read_records_json(path) -> list[MeasurementRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        return records_from_json(fh.read())


def write_records_csv(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            ax, ay, az = rec.setting.direction
            writer.writerow([repr(ax), repr(ay), repr(az), rec.setting.n_particles,
                             rec.n_plus, rec.n_minus, repr(rec.x)])


def read_records_csv(path) -> list[MeasurementRecord]:
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_COLUMNS:
            raise ValueError(f"records CSV header must be {','.join(CSV_COLUMNS)}")
        for row in reader:
            records.append(record_from_dict({
                "a": [float(row["a_x"]), float(row["a_y"]), float(row["a_z"])],
                "N": int(row["N"]),
                "n_plus": int(row["n_plus"]),
                "n_minus": int(row["n_minus"]),
                "x": float(row["x"]),
            }))
    if not records:
        raise ValueError("records CSV contains no data rows")
    return records
