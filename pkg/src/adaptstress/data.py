"""Feature catalog, participant time-series containers and CSV I/O."""
from __future__ import annotations

import csv
import datetime as dt
import enum
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

log = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "nan", "NaN", "NAN", "-1", "-2"})
MISSING_SENTINELS = (-1.0, -2.0)
TARGET = "SS"


class Flag(enum.IntEnum):
    OK = 0
    MISSING_RAW = 1
    ANOMALY = 2
    IMPUTED = 3


class Family(str, enum.Enum):
    ACTIVITY = "activity"
    HEART_RATE = "heart_rate"
    RESPIRATION = "respiration"
    SLEEP = "sleep"
    TARGET = "target"


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    abbreviation: str
    unit: str
    low: float
    high: float
    family: Family

    def contains(self, value: float) -> bool:
        return self.low <= value <= self.high


@dataclass(frozen=True)
class FeatureCatalog:
    entries: tuple[FeatureSpec, ...]

    def __post_init__(self):
        abbrs = [e.abbreviation for e in self.entries]
        if len(set(abbrs)) != len(abbrs):
            raise ValueError("duplicate abbreviations in catalog")
        for e in self.entries:
            if not e.low < e.high:
                raise ValueError(f"empty plausible range for {e.abbreviation}")

    @property
    def abbreviations(self) -> tuple[str, ...]:
        return tuple(e.abbreviation for e in self.entries)

    @property
    def predictors(self) -> tuple[str, ...]:
        return tuple(e.abbreviation for e in self.entries if e.family is not Family.TARGET)

    def __getitem__(self, abbreviation: str) -> FeatureSpec:
        for e in self.entries:
            if e.abbreviation == abbreviation:
                return e
        raise KeyError(abbreviation)

    def index(self, abbreviation: str) -> int:
        return self.abbreviations.index(abbreviation)

    def __len__(self) -> int:
        return len(self.entries)


A, H, R, S = Family.ACTIVITY, Family.HEART_RATE, Family.RESPIRATION, Family.SLEEP

# Table of the 22 wearable predictors plus the stress target (Hydration excluded).
CATALOG = FeatureCatalog((
    FeatureSpec("Total Kilocalories", "TK", "kcal", 381, 4726, A),
    FeatureSpec("Total Steps", "TS", "steps", 46, 31374, A),
    FeatureSpec("Total Distance Meters", "TD", "meters", 31, 80528, A),
    FeatureSpec("Highly Active Seconds", "HA", "seconds", 0, 25768, A),
    FeatureSpec("Active Seconds", "ACS", "seconds", 0, 21357, A),
    FeatureSpec("Moderate Intensity Minutes", "MI", "minutes", 0, 961, A),
    FeatureSpec("Resting Heart Rate", "RH", "bpm", 45, 76, H),
    FeatureSpec("Minimum Average Heart Rate", "MIR", "bpm", 33, 81, H),
    FeatureSpec("Maximum Average Heart Rate", "MXR", "bpm", 75, 172, H),
    FeatureSpec("Average Respiration Value", "AWR", "brpm", 13, 17, R),
    FeatureSpec("Highest Respiration Value", "HRV", "brpm", 15, 27, R),
    FeatureSpec("Lowest Respiration Value", "LRV", "brpm", 3, 13, R),
    FeatureSpec("Deep Sleep Seconds", "DS", "seconds", 0, 11340, S),
    FeatureSpec("Light Sleep Seconds", "LS", "seconds", 600, 41100, S),
    FeatureSpec("REM Sleep Seconds", "RS", "seconds", 300, 27420, S),
    FeatureSpec("Awake Sleep Seconds", "AWS", "seconds", 0, 12360, S),
    FeatureSpec("Awake Count", "AC", "count", 0, 9, S),
    FeatureSpec("Sleep Overall Score", "SOS", "arbitrary", 13, 100, S),
    FeatureSpec("Restless Moment Count", "RMC", "count", 2, 105, S),
    FeatureSpec("Lowest Respiration", "LR", "brpm", 6, 18, R),
    FeatureSpec("Highest Respiration", "HRS", "brpm", 14, 26, R),
    FeatureSpec("Average Respiration", "AR", "brpm", 11, 21, R),
    FeatureSpec("Stress Score", "SS", "arbitrary", 0, 95, Family.TARGET),
))

del A, H, R, S


class LoadError(ValueError):
    """Malformed CSV content."""


class SchemaError(ValueError):
    """Header or date layout violates the per-participant CSV schema."""


@dataclass(frozen=True)
class DailyRecord:
    date: dt.date
    values: dict[str, float]   # NaN marks MISSING
    flags: dict[str, Flag]


@dataclass
class ParticipantSeries:
    """One participant's consecutive daily rows, columns in catalog order.

    ``values`` holds NaN for missing cells; ``flags`` holds :class:`Flag` codes.
    """

    participant_id: str
    dates: list[dt.date]
    values: np.ndarray
    flags: np.ndarray
    catalog: FeatureCatalog = CATALOG

    def __post_init__(self):
        n_cols = len(self.catalog)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1, n_cols)
        self.flags = np.asarray(self.flags, dtype=np.int8).reshape(-1, n_cols)
        if len(self.dates) != self.values.shape[0] or self.flags.shape != self.values.shape:
            raise ValueError("dates, values and flags disagree in length")
        for a, b in zip(self.dates, self.dates[1:]):
            if (b - a).days != 1:
                raise ValueError(f"{self.participant_id}: dates not consecutive at {a} -> {b}")

    def __len__(self) -> int:
        return len(self.dates)

    def column(self, abbreviation: str) -> np.ndarray:
        return self.values[:, self.catalog.index(abbreviation)]

    def record(self, i: int) -> DailyRecord:
        abbrs = self.catalog.abbreviations
        return DailyRecord(
            self.dates[i],
            {a: float(v) for a, v in zip(abbrs, self.values[i])},
            {a: Flag(int(f)) for a, f in zip(abbrs, self.flags[i])},
        )

    @property
    def records(self) -> Iterator[DailyRecord]:
        return (self.record(i) for i in range(len(self)))

    def copy(self) -> "ParticipantSeries":
        return ParticipantSeries(self.participant_id, list(self.dates),
                                 self.values.copy(), self.flags.copy(), self.catalog)

    def n_missing(self) -> int:
        return int(np.isnan(self.values).sum())

    def equals(self, other: "ParticipantSeries") -> bool:
        return (self.participant_id == other.participant_id
                and self.dates == other.dates
                and np.array_equal(self.values, other.values, equal_nan=True)
                and np.array_equal(self.flags, other.flags))


@dataclass
class Cohort:
    participants: list[ParticipantSeries]
    catalog: FeatureCatalog = CATALOG

    def __post_init__(self):
        ids = [p.participant_id for p in self.participants]
        if len(set(ids)) != len(ids):
            raise ValueError("participant ids must be unique")
        if len(ids) < 3:
            raise ValueError(f"cohort needs at least 3 participants, got {len(ids)}")

    @property
    def ids(self) -> list[str]:
        return [p.participant_id for p in self.participants]

    def __getitem__(self, participant_id: str) -> ParticipantSeries:
        for p in self.participants:
            if p.participant_id == participant_id:
                return p
        raise KeyError(participant_id)

    def __len__(self) -> int:
        return len(self.participants)

    def copy(self) -> "Cohort":
        return Cohort([p.copy() for p in self.participants], self.catalog)

    def equals(self, other: "Cohort") -> bool:
        return (len(self) == len(other)
                and all(a.equals(b) for a, b in zip(self.participants, other.participants)))


def _parse_cell(token: str) -> float:
    token = token.strip()
    if token in MISSING_TOKENS:
        return math.nan
    value = float(token)
    if math.isnan(value) or value in MISSING_SENTINELS:
        return math.nan
    return value


def read_participant_csv(path: str | Path, catalog: FeatureCatalog = CATALOG) -> ParticipantSeries:
    """Parse one participant file; calendar gaps become all-MISSING days."""
    path = Path(path)
    expected = ["date", *catalog.abbreviations]
    rows: dict[dt.date, list[float]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        unknown = [c for c in header if c not in expected]
        if unknown:
            raise SchemaError(f"{path}: unknown column(s) {unknown}")
        if header != expected:
            raise SchemaError(f"{path}: header must be {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise LoadError(f"{path}:{lineno}: expected {len(expected)} fields, got {len(row)}")
            try:
                day = dt.date.fromisoformat(row[0].strip())
                cells = [_parse_cell(tok) for tok in row[1:]]
            except ValueError as exc:
                raise LoadError(f"{path}:{lineno}: {exc}") from None
            if day in rows:
                raise SchemaError(f"{path}:{lineno}: duplicate date {day}")
            rows[day] = cells

    if not rows:
        raise LoadError(f"{path}: no data rows")
    first, last = min(rows), max(rows)
    n_days = (last - first).days + 1
    dates = [first + dt.timedelta(days=i) for i in range(n_days)]
    values = np.full((n_days, len(catalog)), np.nan)
    for day, cells in rows.items():
        values[(day - first).days] = cells
    flags = np.where(np.isnan(values), Flag.MISSING_RAW, Flag.OK).astype(np.int8)
    return ParticipantSeries(path.stem, dates, values, flags, catalog)


def _flags_path(directory: Path, participant_id: str) -> Path:
    return directory / "flags" / f"{participant_id}.csv"


def load_cohort(directory_path: str | Path, catalog: FeatureCatalog = CATALOG) -> Cohort:
    """Load every ``*.csv`` in a directory as one participant, sorted by id.

    If a ``flags/`` subdirectory written by :func:`write_cohort` is present,
    per-cell quality flags are restored from it.
    """
    directory = Path(directory_path)
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise FileNotFoundError(f"no participant CSV files in {directory}")
    participants = []
    for f in files:
        series = read_participant_csv(f, catalog)
        fpath = _flags_path(directory, series.participant_id)
        if fpath.exists():
            series.flags = _read_flags(fpath, series, catalog)
        participants.append(series)
    return Cohort(participants, catalog)


def _read_flags(path: Path, series: ParticipantSeries, catalog: FeatureCatalog) -> np.ndarray:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["date", *catalog.abbreviations]:
            raise SchemaError(f"{path}: flag header does not match catalog")
        rows = [r for r in reader if r]
    if [dt.date.fromisoformat(r[0]) for r in rows] != series.dates:
        raise SchemaError(f"{path}: flag dates do not match data file")
    return np.array([[int(c) for c in r[1:]] for r in rows], dtype=np.int8)


def _format(value: float) -> str:
    return "" if math.isnan(value) else repr(float(value))


def write_participant_csv(series: ParticipantSeries, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", *series.catalog.abbreviations])
        for day, row in zip(series.dates, series.values):
            writer.writerow([day.isoformat(), *(_format(v) for v in row)])


def write_cohort(cohort: Cohort, directory: str | Path, with_flags: bool = True) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for series in cohort.participants:
        write_participant_csv(series, directory / f"{series.participant_id}.csv")
        if with_flags:
            fpath = _flags_path(directory, series.participant_id)
            fpath.parent.mkdir(exist_ok=True)
            with fpath.open("w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["date", *series.catalog.abbreviations])
                for day, row in zip(series.dates, series.flags):
                    writer.writerow([day.isoformat(), *(str(int(f)) for f in row)])


@dataclass(frozen=True)
class Violation:
    participant_id: str
    date: dt.date
    abbreviation: str
    value: float


def validate_against_catalog(cohort: Cohort) -> list[Violation]:
    """Report every non-missing value outside its plausible range."""
    out = []
    for series in cohort.participants:
        lows = np.array([e.low for e in cohort.catalog.entries])
        highs = np.array([e.high for e in cohort.catalog.entries])
        with np.errstate(invalid="ignore"):
            bad = (series.values < lows) | (series.values > highs)
        for i, j in zip(*np.nonzero(bad)):
            out.append(Violation(series.participant_id, series.dates[i],
                                 cohort.catalog.entries[j].abbreviation,
                                 float(series.values[i, j])))
    return out
