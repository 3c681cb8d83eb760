"""Train-to-test distribution shift metrics and the combined shift score."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShiftError(ValueError):
    pass


DEFAULT_WEIGHTS = (1 / 3, 1 / 3, 1 / 3)


def _check(source: np.ndarray, target: np.ndarray, min_rows: int = 1) -> tuple[np.ndarray, np.ndarray]:
    source = np.atleast_2d(np.asarray(source, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if source.shape[0] < min_rows or target.shape[0] < min_rows:
        raise ShiftError(f"need at least {min_rows} sample(s) in each set")
    if source.shape[1] != target.shape[1]:
        raise ShiftError("source and target feature counts differ")
    return source, target


def standardize_by_source(source: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    source, target = _check(source, target)
    mu = source.mean(axis=0)
    sd = source.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return (source - mu) / sd, (target - mu) / sd


def mmd(source: np.ndarray, target: np.ndarray) -> float:
    """Linear-kernel MMD^2: squared distance between feature mean vectors."""
    source, target = _check(source, target)
    diff = source.mean(axis=0) - target.mean(axis=0)
    return float(diff @ diff)


def kl_divergence(source: np.ndarray, target: np.ndarray, bins: int = 16, eps: float = 1e-6) -> float:
    """Mean over features of histogram KL(source || target) on a shared range."""
    source, target = _check(source, target)
    total = 0.0
    for j in range(source.shape[1]):
        s, t = source[:, j], target[:, j]
        lo = min(s.min(), t.min())
        hi = max(s.max(), t.max())
        if hi <= lo:
            continue
        p = np.histogram(s, bins=bins, range=(lo, hi))[0] / len(s) + eps
        q = np.histogram(t, bins=bins, range=(lo, hi))[0] / len(t) + eps
        p /= p.sum()
        q /= q.sum()
        total += float(np.sum(p * np.log(p / q)))
    return max(total / source.shape[1], 0.0)


def variance_ratio_score(source: np.ndarray, target: np.ndarray, eps: float = 1e-12) -> float:
    """Mean over features of 1 - 1/r, r = larger variance over smaller."""
    source, target = _check(source, target, min_rows=2)
    vs = np.maximum(source.var(axis=0, ddof=1), eps)
    vt = np.maximum(target.var(axis=0, ddof=1), eps)
    r = np.maximum(vs, vt) / np.minimum(vs, vt)
    return float(np.mean(1.0 - 1.0 / r))


def squash(x: float) -> float:
    return x / (x + 1.0)


def shift_score(mmd_value: float, kl_value: float, variance_score: float,
                weights: tuple[float, float, float] = DEFAULT_WEIGHTS) -> float:
    if abs(sum(weights) - 1.0) > 1e-9 or min(weights) < 0:
        raise ShiftError(f"shift weights must be nonnegative and sum to 1, got {weights}")
    w1, w2, w3 = weights
    return w1 * squash(mmd_value) + w2 * squash(kl_value) + w3 * variance_score


@dataclass(frozen=True)
class ShiftReport:
    mmd: float
    kl: float
    variance_ratio_score: float
    s_dist: float

    def to_dict(self) -> dict:
        return {"mmd": self.mmd, "kl": self.kl,
                "variance_ratio_score": self.variance_ratio_score, "s_dist": self.s_dist}


def shift_report(source: np.ndarray, target: np.ndarray,
                 weights: tuple[float, float, float] = DEFAULT_WEIGHTS, bins: int = 16) -> ShiftReport:
    """All three metrics on source-standardized data, plus the weighted score."""
    s, t = standardize_by_source(source, target)
    m = mmd(s, t)
    k = kl_divergence(s, t, bins=bins)
    v = variance_ratio_score(s, t)
    return ShiftReport(m, k, v, shift_score(m, k, v, weights))
