"""Seeded synthetic cohorts standing in for the private wearable dataset.

Each participant gets its own feature baselines (shared per feature family
plus a per-feature part), a weekly rhythm, a slow linear trend and AR(1)
day-to-day variation. Latent stress is a participant baseline plus a linear
combination of the standardized features with participant-specific couplings,
taken ``response_lag`` days earlier (stress reacts to the previous day's
physiology by default).
"""
from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import seeding
from .data import CATALOG, TARGET, Cohort, Family, Flag, ParticipantSeries
from .shift import shift_report


class CohortSpecError(ValueError):
    pass


# Reference level and cohort-scale spread of each predictor, natural units.
REFERENCE = {
    "TK": (2300.0, 450.0), "TS": (8746.0, 3000.0), "TD": (7120.0, 3500.0),
    "HA": (4907.0, 2200.0), "ACS": (7522.0, 2500.0), "MI": (129.0, 100.0),
    "RH": (60.1, 5.0), "MIR": (57.7, 5.0), "MXR": (124.3, 10.0),
    "AWR": (14.0, 0.5), "HRV": (20.0, 1.8), "LRV": (8.0, 1.2),
    "DS": (4250.0, 1200.0), "LS": (16817.0, 3000.0), "RS": (4897.0, 1600.0),
    "AWS": (2500.0, 1200.0), "AC": (3.0, 1.2), "SOS": (66.1, 11.0),
    "RMC": (40.0, 12.0), "LR": (11.0, 1.2), "HRS": (19.0, 1.5), "AR": (15.0, 1.2),
}

# Cohort-typical couplings (stress fraction per standardized unit); zero elsewhere.
TYPICAL_COUPLINGS = {
    "RS": -0.15, "SOS": -0.06, "ACS": -0.05, "RH": 0.05, "AWS": 0.04,
    "TS": -0.03, "HRV": -0.03, "MIR": 0.025, "AR": -0.02,
}

# Features that move against their family's shared level (more awake time on
# nights when the sleep family runs high would be implausible).
FAMILY_SIGN = {"AWS": -1.0, "AC": -1.0, "RMC": -1.0}

# Sign-flip motif: P08 keeps the typical REM effect, P15 reverses it.
MOTIF = {("P08", "RS"): -0.15, ("P15", "RS"): 0.02}
MOTIF_OFFSETS = {("P08", "RS"): 0.5, ("P15", "RS"): -0.5}

DEFAULT_MISSING = {a: 0.005 for a in CATALOG.predictors} | {
    "RS": 0.035, "DS": 0.006, "LS": 0.006, "AWS": 0.006, "AC": 0.006, "SOS": 0.006,
    "RMC": 0.006, TARGET: 0.006,
}
DEFAULT_ANOMALY = {a: 0.02 for a in CATALOG.predictors} | {
    "LRV": 0.076, "AWR": 0.067, "TD": 0.042, "TS": 0.037,
    "RH": 0.03, "MIR": 0.028, "MXR": 0.035, TARGET: 0.016,
}

STRESS_SCALE = 95.0
AR_COEF = 0.5


def participant_ids(n: int) -> list[str]:
    return [f"P{i + 1:02d}" for i in range(n)]


@dataclass
class CohortSpec:
    n_participants: int = 16
    days_per_participant: tuple[int, int] = (90, 110)
    seed: int = 0
    baseline_stress_range: tuple[float, float] = (44.0, 50.0)
    coupling_table: dict[tuple[str, str], float] | None = None
    missing_rates: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_MISSING))
    anomaly_rates: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_ANOMALY))
    noise_scale: float = 5.0
    offset_scale: float = 0.7
    pinned_offsets: dict[tuple[str, str], float] = field(default_factory=lambda: dict(MOTIF_OFFSETS))
    min_pairwise_shift: float | None = 0.3
    min_window_span: int = 16        # w_in + w_out of the largest planned configuration
    response_lag: int = 1            # stress responds to physiology this many days earlier
    start_date: dt.date = dt.date(2024, 3, 4)

    def validate(self) -> None:
        lo, hi = self.days_per_participant
        if self.n_participants < 3:
            raise CohortSpecError("need at least 3 participants")
        if not 0 < lo <= hi:
            raise CohortSpecError(f"bad day range {self.days_per_participant}")
        if lo - 2 < self.min_window_span:
            raise CohortSpecError(f"{lo} days cannot hold a {self.min_window_span}-day window after trimming")
        for name, rates in (("missing", self.missing_rates), ("anomaly", self.anomaly_rates)):
            for abbr, r in rates.items():
                if abbr not in CATALOG.abbreviations:
                    raise CohortSpecError(f"unknown feature {abbr} in {name} rates")
                if not 0.0 <= r <= 1.0:
                    raise CohortSpecError(f"{name} rate for {abbr} must lie in [0, 1], got {r}")
        for abbr in CATALOG.abbreviations:
            if self.missing_rates.get(abbr, 0) + self.anomaly_rates.get(abbr, 0) > 1.0:
                raise CohortSpecError(f"combined defect rate for {abbr} exceeds 1")
        if not 0 <= self.response_lag < lo:
            raise CohortSpecError("response_lag must be nonnegative and shorter than a series")
        if self.noise_scale < 0:
            raise CohortSpecError("noise_scale must be nonnegative")

    def couplings(self) -> dict[str, dict[str, float]]:
        """Full (participant -> feature -> coupling) table; explicit entries win."""
        out = {}
        for pid in participant_ids(self.n_participants):
            g = seeding.rng(self.seed, "coupling", pid)
            row = {}
            for abbr in CATALOG.predictors:
                base = TYPICAL_COUPLINGS.get(abbr, 0.0)
                row[abbr] = float(base * (1.0 + 0.15 * g.standard_normal())) if base else 0.0
            out[pid] = row
        table = dict(MOTIF) if self.coupling_table is None else dict(self.coupling_table)
        for (pid, abbr), c in table.items():
            if pid in out:
                out[pid][abbr] = float(c)
        return out


@dataclass
class DefectLog:
    missing: list[tuple[int, str]] = field(default_factory=list)
    anomaly: list[tuple[int, str]] = field(default_factory=list)


def _clean_series(pid: str, couplings: dict[str, float], spec: CohortSpec,
                  g: np.random.Generator) -> tuple[ParticipantSeries, dict[str, float]]:
    lo, hi = spec.days_per_participant
    n_days = int(g.integers(lo, hi + 1))
    t = np.arange(n_days)
    family_offset = {f: g.normal(0.0, 0.6) for f in Family}
    columns = {}
    z_eff = {}
    offsets = {}
    for abbr in CATALOG.predictors:
        entry = CATALOG[abbr]
        offset = spec.offset_scale * (FAMILY_SIGN.get(abbr, 1.0) * family_offset[entry.family]
                                     + g.normal(0.0, 0.5))
        offset = spec.pinned_offsets.get((pid, abbr), offset)
        offsets[abbr] = float(offset)
        within = g.uniform(0.4, 0.9)
        weekly = g.uniform(0.0, 0.5) * within * np.sin(2 * np.pi * (t + g.uniform(0, 7)) / 7.0)
        trend = g.normal(0.0, 0.3) * (t / max(n_days - 1, 1) - 0.5)
        ar = np.empty(n_days)
        ar[0] = g.normal(0.0, within)
        innov = g.normal(0.0, within * np.sqrt(1 - AR_COEF ** 2), size=n_days)
        for i in range(1, n_days):
            ar[i] = AR_COEF * ar[i - 1] + innov[i]
        z = offset + weekly + trend + ar
        mean, sd = REFERENCE[abbr]
        x = np.clip(mean + sd * z, entry.low, entry.high)
        columns[abbr] = x
        z_eff[abbr] = (x - mean) / sd

    base = g.uniform(*spec.baseline_stress_range)
    drive = sum(couplings[a] * z_eff[a] for a in CATALOG.predictors)
    if spec.response_lag:
        drive = np.concatenate([np.repeat(drive[:1], spec.response_lag), drive[:-spec.response_lag]])
    stress = base + STRESS_SCALE * drive
    stress = stress + spec.noise_scale * g.standard_normal(n_days)
    columns[TARGET] = np.clip(stress, 0.0, STRESS_SCALE)

    start = spec.start_date + dt.timedelta(days=int(g.integers(0, 14)))
    dates = [start + dt.timedelta(days=int(i)) for i in t]
    values = np.column_stack([columns[a] for a in CATALOG.abbreviations])
    flags = np.zeros_like(values, dtype=np.int8)
    return ParticipantSeries(pid, dates, values, flags), offsets


def _inject(series: ParticipantSeries, spec: CohortSpec, sub_seed: int) -> tuple[ParticipantSeries, DefectLog]:
    out = series.copy()
    log = DefectLog()
    g = np.random.default_rng(sub_seed)
    n = len(out)
    for j, abbr in enumerate(out.catalog.abbreviations):
        n_miss = int(round(spec.missing_rates.get(abbr, 0.0) * n))
        n_anom = int(round(spec.anomaly_rates.get(abbr, 0.0) * n))
        if n_miss + n_anom == 0:
            continue
        rows = g.permutation(n)
        miss_rows, anom_rows = np.sort(rows[:n_miss]), np.sort(rows[n_miss:n_miss + n_anom])
        col = out.values[:, j]
        if abbr == TARGET:
            spikes = np.zeros(len(anom_rows))            # sensor-artifact zeros
        else:
            q1, q3 = np.percentile(series.values[:, j], [25, 75])
            iqr = max(q3 - q1, 1e-6 * max(abs(q3), 1.0))
            spikes = q3 + g.uniform(2.0, 4.0, size=len(anom_rows)) * iqr
        col[anom_rows] = spikes
        col[miss_rows] = np.nan
        out.flags[miss_rows, j] = Flag.MISSING_RAW
        log.missing += [(int(r), abbr) for r in miss_rows]
        log.anomaly += [(int(r), abbr) for r in anom_rows]
    return out, log


def inject_quality_defects(series: ParticipantSeries, spec: CohortSpec, sub_seed: int) -> ParticipantSeries:
    """Blank cells at ``missing_rates`` and overwrite cells with spikes at ``anomaly_rates``.

    Predictor spikes land between 2 and 4 IQRs above the clean upper quartile;
    stress anomalies are zero readings. Missing and spiked cells are disjoint.
    """
    return _inject(series, spec, sub_seed)[0]


@dataclass
class SyntheticCohort:
    cohort: Cohort
    couplings: dict[str, dict[str, float]]
    offsets: dict[str, dict[str, float]]
    defects: dict[str, DefectLog]
    clean: Cohort

    @property
    def dominant_feature(self) -> str:
        strength = {a: np.mean([abs(self.couplings[p][a]) for p in self.couplings])
                    for a in CATALOG.predictors}
        return max(strength, key=lambda a: (strength[a], -CATALOG.index(a)))

    def ground_truth(self) -> dict:
        dates = {p.participant_id: p.dates for p in self.cohort.participants}
        return {
            "couplings": self.couplings,
            "offsets": self.offsets,
            "dominant_feature": self.dominant_feature,
            "motif": {f"{p}/{a}": c for (p, a), c in MOTIF.items()},
            "defects": {
                pid: {
                    "missing": [[dates[pid][r].isoformat(), a] for r, a in log.missing],
                    "anomaly": [[dates[pid][r].isoformat(), a] for r, a in log.anomaly],
                }
                for pid, log in self.defects.items()
            },
        }

    def write_ground_truth(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.ground_truth(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")


def _pairwise_ok(candidate: np.ndarray, others: list[np.ndarray], threshold: float) -> bool:
    for other in others:
        if shift_report(other, candidate).s_dist <= threshold:
            return False
        if shift_report(candidate, other).s_dist <= threshold:
            return False
    return True


def generate_synthetic(spec: CohortSpec, max_attempts: int = 20) -> SyntheticCohort:
    spec.validate()
    couplings = spec.couplings()
    pred_idx = [CATALOG.index(a) for a in CATALOG.predictors]
    clean, dirty, offsets, defects = [], [], {}, {}
    accepted_features: list[np.ndarray] = []
    for pid in participant_ids(spec.n_participants):
        for attempt in range(max_attempts):
            g = seeding.rng(spec.seed, "participant", pid, attempt)
            series, offs = _clean_series(pid, couplings[pid], spec, g)
            feats = series.values[:, pred_idx]
            if spec.min_pairwise_shift is None or _pairwise_ok(feats, accepted_features, spec.min_pairwise_shift):
                break
        else:
            raise CohortSpecError(f"{pid}: could not reach pairwise shift > {spec.min_pairwise_shift}")
        accepted_features.append(feats)
        injected, log = _inject(series, spec, seeding.sub_seed(spec.seed, "defects", pid))
        clean.append(series)
        dirty.append(injected)
        offsets[pid] = offs
        defects[pid] = log
    return SyntheticCohort(Cohort(dirty), couplings, offsets, defects, Cohort(clean))


def generate_cohort(spec: CohortSpec) -> Cohort:
    """Deterministic synthetic cohort (with quality defects) for ``spec``."""
    return generate_synthetic(spec).cohort
