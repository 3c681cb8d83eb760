"""Anomaly detection, imputation, edge trimming and min-max scaling.

Pipeline order is fixed: trim edges -> anomaly detection -> imputation ->
scaling. Every function returns a new object and leaves its input intact.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import TARGET, Cohort, Flag, ParticipantSeries


class PreprocessingError(ValueError):
    pass


class ImputationError(PreprocessingError):
    pass


class ScalerError(PreprocessingError):
    pass


def iqr_bounds(values: np.ndarray, multiplier: float = 1.0) -> tuple[float, float]:
    q1, q3 = np.percentile(values, [25, 75])   # linear interpolation
    iqr = q3 - q1
    return float(q1 - multiplier * iqr), float(q3 + multiplier * iqr)


def detect_anomalies_iqr(series: ParticipantSeries, abbreviation: str,
                         multiplier: float = 1.0) -> ParticipantSeries:
    """Blank values outside [Q1 - m*IQR, Q3 + m*IQR] of this participant's column."""
    if abbreviation == TARGET:
        raise PreprocessingError("IQR detection does not apply to the stress target")
    out = series.copy()
    j = out.catalog.index(abbreviation)
    col = out.values[:, j]
    present = ~np.isnan(col)
    if present.sum() < 4:
        warnings.warn(f"{series.participant_id}/{abbreviation}: fewer than 4 values, IQR check skipped")
        return out
    lo, hi = iqr_bounds(col[present], multiplier)
    with np.errstate(invalid="ignore"):
        hit = present & ((col < lo) | (col > hi))
    out.values[hit, j] = np.nan
    out.flags[hit, j] = Flag.ANOMALY
    return out


def _neighbour_stats(col: np.ndarray, window_days: int) -> tuple[np.ndarray, np.ndarray]:
    """Leave-one-out mean/std over a centred window, ignoring missing cells."""
    half = window_days // 2
    n = len(col)
    means = np.full(n, np.nan)
    stds = np.full(n, np.nan)
    for t in range(n):
        lo, hi = max(0, t - half), min(n, t + half + 1)
        neigh = np.concatenate([col[lo:t], col[t + 1:hi]])
        neigh = neigh[~np.isnan(neigh)]
        if len(neigh) >= 2:
            means[t] = neigh.mean()
            stds[t] = neigh.std()
    return means, stds


def detect_anomalies_rolling(series: ParticipantSeries, window_days: int = 7,
                             k: float = 3.0) -> ParticipantSeries:
    """Flag stress values far from their local mean, and zero readings.

    The local statistics exclude the value under test, otherwise a single spike
    inflates its own standard deviation enough to hide itself.
    """
    if window_days < 3:
        raise PreprocessingError(f"window_days must be >= 3, got {window_days}")
    out = series.copy()
    j = out.catalog.index(TARGET)
    col = out.values[:, j]
    means, stds = _neighbour_stats(col, window_days)
    present = ~np.isnan(col)
    with np.errstate(invalid="ignore"):
        far = np.abs(col - means) > k * stds
    hit = present & ((col == 0) | (far & ~np.isnan(means)))
    out.values[hit, j] = np.nan
    out.flags[hit, j] = Flag.ANOMALY
    return out


def trim_edge_days(series: ParticipantSeries) -> ParticipantSeries:
    if len(series) < 3:
        raise PreprocessingError(f"{series.participant_id}: series of length {len(series)} "
                                 "is empty after trimming edge days")
    return ParticipantSeries(series.participant_id, series.dates[1:-1],
                             series.values[1:-1].copy(), series.flags[1:-1].copy(), series.catalog)


def impute_mean(cohort: Cohort) -> Cohort:
    """Fill MISSING cells with the participant's column mean (cohort mean as fallback)."""
    out = cohort.copy()
    stacked = np.vstack([p.values for p in out.participants])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        cohort_means = np.nanmean(stacked, axis=0)
    for p in out.participants:
        holes = np.isnan(p.values)
        if not holes.any():
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            own = np.nanmean(p.values, axis=0)
        fill = np.where(np.isnan(own), cohort_means, own)
        for j in np.nonzero(holes.any(axis=0))[0]:
            if np.isnan(fill[j]):
                raise ImputationError(
                    f"feature {out.catalog.entries[j].abbreviation} is missing for the entire cohort")
            p.values[holes[:, j], j] = fill[j]
            p.flags[holes[:, j], j] = Flag.IMPUTED
    return out


@dataclass
class FeatureQuality:
    n_cells: int
    n_missing: int
    n_anomaly: int

    @property
    def missing_rate(self) -> float:
        return self.n_missing / self.n_cells if self.n_cells else 0.0

    @property
    def anomaly_rate(self) -> float:
        return self.n_anomaly / self.n_cells if self.n_cells else 0.0


@dataclass
class QualityReport:
    features: dict[str, FeatureQuality] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {a: {"cells": q.n_cells, "missing": q.n_missing, "missing_rate": q.missing_rate,
                    "anomalies": q.n_anomaly, "anomaly_rate": q.anomaly_rate}
                for a, q in self.features.items()}


def quality_report(cohort: Cohort) -> QualityReport:
    """Counts of raw-missing and anomaly-flagged cells per feature."""
    report = QualityReport()
    flags = np.vstack([p.flags for p in cohort.participants])
    for j, abbr in enumerate(cohort.catalog.abbreviations):
        col = flags[:, j]
        report.features[abbr] = FeatureQuality(len(col), int((col == Flag.MISSING_RAW).sum()),
                                               int((col == Flag.ANOMALY).sum()))
    return report


def detect_anomalies(series: ParticipantSeries, iqr_multiplier: float = 1.0,
                     window_days: int = 7, k: float = 3.0) -> ParticipantSeries:
    out = series
    for abbr in series.catalog.predictors:
        out = detect_anomalies_iqr(out, abbr, iqr_multiplier)
    return detect_anomalies_rolling(out, window_days, k)


def flag_cohort(cohort: Cohort, iqr_multiplier: float = 1.0, window_days: int = 7,
                k: float = 3.0) -> Cohort:
    """Trim edge days and run both anomaly detectors on every participant."""
    return Cohort([detect_anomalies(trim_edge_days(p), iqr_multiplier, window_days, k)
                   for p in cohort.participants], cohort.catalog)


def preprocess_cohort(cohort: Cohort, iqr_multiplier: float = 1.0, window_days: int = 7,
                      k: float = 3.0) -> tuple[Cohort, QualityReport]:
    """Trim, detect anomalies and impute. Scaling happens per fold, later."""
    flagged = flag_cohort(cohort, iqr_multiplier, window_days, k)
    return impute_mean(flagged), quality_report(flagged)


@dataclass(frozen=True)
class Scaler:
    """Per-column min/max fitted on training participants."""

    mins: dict[str, float]
    maxs: dict[str, float]

    def transform(self, abbreviation: str, values: np.ndarray) -> np.ndarray:
        lo, hi = self.mins[abbreviation], self.maxs[abbreviation]
        return np.clip((np.asarray(values, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)

    def inverse(self, abbreviation: str, values: np.ndarray) -> np.ndarray:
        lo, hi = self.mins[abbreviation], self.maxs[abbreviation]
        return np.asarray(values, dtype=np.float64) * (hi - lo) + lo

    def to_dict(self) -> dict:
        return {a: [self.mins[a], self.maxs[a]] for a in self.mins}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls({a: float(v[0]) for a, v in d.items()}, {a: float(v[1]) for a, v in d.items()})


def fit_scaler(training_series: list[ParticipantSeries],
               columns: tuple[str, ...] | None = None) -> Scaler:
    if not training_series:
        raise ScalerError("no training series to fit on")
    catalog = training_series[0].catalog
    columns = columns or catalog.abbreviations
    stacked = np.vstack([s.values for s in training_series])
    mins, maxs = {}, {}
    for abbr in columns:
        col = stacked[:, catalog.index(abbr)]
        col = col[~np.isnan(col)]
        if len(col) == 0 or col.max() <= col.min():
            raise ScalerError(f"feature {abbr} is constant (or empty) on the training data")
        mins[abbr], maxs[abbr] = float(col.min()), float(col.max())
    return Scaler(mins, maxs)


def apply_scaler(scaler: Scaler, series: ParticipantSeries) -> ParticipantSeries:
    out = series.copy()
    for abbr in scaler.mins:
        j = out.catalog.index(abbr)
        out.values[:, j] = scaler.transform(abbr, out.values[:, j])
    return out
