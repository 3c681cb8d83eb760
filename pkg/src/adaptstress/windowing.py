"""Sliding-window samples and per-fold dataset assembly."""
from __future__ import annotations

import datetime as dt
import hashlib
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import TARGET, Cohort, ParticipantSeries
from .preprocessing import Scaler, apply_scaler, fit_scaler
from .selection import SelectionResult, select_features

log = logging.getLogger(__name__)

NO_DOMAIN = -1


class FoldError(RuntimeError):
    pass


@dataclass(frozen=True)
class WindowedSample:
    inputs: np.ndarray          # (w_in, d)
    targets: np.ndarray         # (w_out,)
    participant_id: str
    domain_label: int | None
    anchor_date: dt.date
    history_stress: np.ndarray  # (w_in,) scaled stress on the input days


def window_count(T: int, w_in: int, w_out: int, step: int = 1) -> int:
    if T < w_in + w_out:
        return 0
    return (T - w_in - w_out) // step + 1


def make_windows(series: ParticipantSeries, w_in: int, w_out: int, step: int = 1,
                 features: tuple[str, ...] | None = None,
                 domain_label: int | None = None) -> list[WindowedSample]:
    """All (input block, target vector) pairs anchored on the last input day."""
    if w_in < 1 or w_out < 1 or step < 1:
        raise ValueError("w_in, w_out and step must be positive")
    features = tuple(features) if features is not None else series.catalog.predictors
    cols = [series.catalog.index(a) for a in features]
    X = series.values[:, cols]
    y = series.column(TARGET)
    if np.isnan(X).any() or np.isnan(y).any():
        raise FoldError(f"{series.participant_id}: MISSING cells reached windowing; impute first")
    T = len(series)
    n = window_count(T, w_in, w_out, step)
    if n == 0:
        warnings.warn(f"{series.participant_id}: {T} days cannot fit w_in={w_in} + w_out={w_out}")
        return []
    out = []
    for k in range(n):
        start = k * step
        anchor = start + w_in - 1
        out.append(WindowedSample(X[start:anchor + 1].copy(), y[anchor + 1:anchor + 1 + w_out].copy(),
                                  series.participant_id, domain_label, series.dates[anchor],
                                  y[start:anchor + 1].copy()))
    return out


@dataclass
class WindowSet:
    """Stacked windows; the array form every model-facing stage consumes."""

    inputs: np.ndarray          # (N, w_in, d)
    targets: np.ndarray         # (N, w_out)
    history_stress: np.ndarray  # (N, w_in)
    participant_ids: np.ndarray
    domain_labels: np.ndarray   # NO_DOMAIN where absent
    anchor_dates: list[dt.date]
    features: tuple[str, ...]

    @classmethod
    def from_samples(cls, samples: list[WindowedSample], features: tuple[str, ...]) -> "WindowSet":
        if not samples:
            raise FoldError("no windows to stack")
        return cls(
            np.stack([s.inputs for s in samples]),
            np.stack([s.targets for s in samples]),
            np.stack([s.history_stress for s in samples]),
            np.array([s.participant_id for s in samples]),
            np.array([NO_DOMAIN if s.domain_label is None else s.domain_label for s in samples]),
            [s.anchor_date for s in samples],
            tuple(features),
        )

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def w_in(self) -> int:
        return self.inputs.shape[1]

    @property
    def w_out(self) -> int:
        return self.targets.shape[1]

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx, dtype=np.intp)
        return WindowSet(self.inputs[idx], self.targets[idx], self.history_stress[idx],
                         self.participant_ids[idx], self.domain_labels[idx],
                         [self.anchor_dates[i] for i in idx], self.features)

    def for_participant(self, pid: str) -> "WindowSet":
        return self.subset(np.nonzero(self.participant_ids == pid)[0])

    def aggregated(self) -> np.ndarray:
        """Per-window temporal mean of each feature, (N, d)."""
        return self.inputs.mean(axis=1)

    def save(self, path: str | Path) -> None:
        np.savez(path, inputs=self.inputs, targets=self.targets, history_stress=self.history_stress,
                 participant_ids=self.participant_ids, domain_labels=self.domain_labels,
                 anchor_dates=np.array([d.isoformat() for d in self.anchor_dates]),
                 features=np.array(self.features))

    @classmethod
    def load(cls, path: str | Path) -> "WindowSet":
        with np.load(path) as z:
            return cls(z["inputs"], z["targets"], z["history_stress"], z["participant_ids"],
                       z["domain_labels"], [dt.date.fromisoformat(s) for s in z["anchor_dates"]],
                       tuple(str(f) for f in z["features"]))


def cohort_hash(cohort: Cohort) -> str:
    h = hashlib.sha256()
    for p in cohort.participants:
        h.update(p.participant_id.encode())
        h.update(",".join(d.isoformat() for d in p.dates).encode())
        h.update(np.ascontiguousarray(p.values).tobytes())
    return h.hexdigest()[:16]


def cache_path(cache_dir: str | Path, cohort: Cohort, w_in: int, w_out: int, fold: str, part: str) -> Path:
    return Path(cache_dir) / f"{cohort_hash(cohort)}_w{w_in}_p{w_out}_{fold}_{part}.npz"


@dataclass(frozen=True)
class FoldAssignment:
    test: str
    val: str
    train: tuple[str, ...]

    def __post_init__(self):
        parts = [self.test, self.val, *self.train]
        if len(set(parts)) != len(parts):
            raise FoldError("train/val/test participants overlap")


@dataclass(frozen=True)
class SelectionSettings:
    n_keep: int = 15
    corr_threshold: float = 0.05
    mi_bins: int = 16
    n_trees: int = 100
    seed: int = 0


@dataclass
class FoldData:
    assignment: FoldAssignment
    train: WindowSet
    val: WindowSet
    test: WindowSet
    scaler: Scaler
    selection: SelectionResult
    train_stress_mean: float


def selection_matrix(train_series: list[ParticipantSeries], w_in: int, w_out: int) -> tuple[np.ndarray, np.ndarray, tuple[str, ...]]:
    """Window-aggregated predictors vs. first-horizon stress, all predictors."""
    names = train_series[0].catalog.predictors
    rows, ys = [], []
    for s in train_series:
        for w in make_windows(s, w_in, w_out, features=names):
            rows.append(w.inputs.mean(axis=0))
            ys.append(w.targets[0])
    if not rows:
        raise FoldError("training participants yield no windows")
    return np.array(rows), np.array(ys), names


def assemble_fold(cohort: Cohort, assignment: FoldAssignment, w_in: int, w_out: int,
                  selection: SelectionSettings | SelectionResult = SelectionSettings()) -> FoldData:
    """Scale on train, select features on train, then window every partition.

    ``selection`` may be a frozen :class:`SelectionResult` to skip re-selection.
    """
    train_raw = [cohort[p] for p in assignment.train]
    scaler = fit_scaler(train_raw)
    scaled = {p.participant_id: apply_scaler(scaler, p) for p in cohort.participants}
    train_scaled = [scaled[p] for p in assignment.train]

    if isinstance(selection, SelectionSettings):
        X, y, names = selection_matrix(train_scaled, w_in, w_out)
        selection = select_features(X, y, names, selection.n_keep, selection.corr_threshold,
                                    selection.mi_bins, selection.n_trees, selection.seed)
    features = selection.kept

    def build(pids, labelled):
        samples = []
        for label, pid in enumerate(pids):
            samples += make_windows(scaled[pid], w_in, w_out, features=features,
                                    domain_label=label if labelled else None)
        if not samples:
            raise FoldError(f"fold test={assignment.test}: partition {list(pids)} yields no windows")
        return WindowSet.from_samples(samples, features)

    train = build(assignment.train, True)
    val = build([assignment.val], False)
    test = build([assignment.test], False)
    stress_mean = float(np.mean(np.concatenate([s.column(TARGET) for s in train_scaled])))
    return FoldData(assignment, train, val, test, scaler, selection, stress_mean)
