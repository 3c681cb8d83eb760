"""Ensemble feature selection: Pearson filter, forest-based RFE, histogram MI, voting."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import RandomForestRegressor

CORR, RFE, MI = "CORR", "RFE", "MI"


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class RankedSet:
    """Features a method selected, plus its full best-to-worst ranking."""

    method: str
    selected: tuple[str, ...]
    ranking: tuple[str, ...]
    scores: dict[str, float]

    def rank_of(self, name: str) -> int:
        return self.ranking.index(name) + 1


@dataclass(frozen=True)
class SelectionResult:
    kept: tuple[str, ...]
    votes: dict[str, tuple[str, ...]]
    ranks: dict[str, float]

    def to_dict(self) -> dict:
        return {"kept": list(self.kept),
                "votes": {k: list(v) for k, v in self.votes.items()},
                "ranks": self.ranks}

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionResult":
        return cls(tuple(d["kept"]), {k: tuple(v) for k, v in d["votes"].items()},
                   {k: float(v) for k, v in d["ranks"].items()})


def _as_matrix(X, y, names):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != len(y):
        raise SelectionError("X must be samples x features and match y")
    if X.shape[0] < 2:
        raise SelectionError("need at least 2 samples")
    names = tuple(names) if names is not None else tuple(f"f{i}" for i in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise SelectionError("one name per column required")
    return X, y, names


def _order(names, scores):
    # best first; ties resolved by column order
    return tuple(sorted(names, key=lambda n: (-scores[n], names.index(n))))


def pearson_abs(x: np.ndarray, y: np.ndarray) -> float:
    xc, yc = x - x.mean(), y - y.mean()
    denom = np.sqrt((xc @ xc) * (yc @ yc))
    if denom <= 0:
        return 0.0
    return float(abs(xc @ yc) / denom)


def select_correlation(X, y, names=None, threshold: float = 0.05) -> RankedSet:
    X, y, names = _as_matrix(X, y, names)
    scores = {}
    for j, n in enumerate(names):
        if np.ptp(X[:, j]) == 0:
            warnings.warn(f"feature {n} has zero variance; |r| set to 0")
        scores[n] = pearson_abs(X[:, j], y)
    ranking = _order(names, scores)
    return RankedSet(CORR, tuple(n for n in ranking if scores[n] >= threshold), ranking, scores)


def select_rfe(X, y, keep: int, names=None, n_trees: int = 100, seed: int = 0) -> RankedSet:
    """Drop the least important feature (forest impurity importance) until ``keep`` remain."""
    X, y, names = _as_matrix(X, y, names)
    if not 1 <= keep <= len(names):
        raise SelectionError(f"keep must be in [1, {len(names)}], got {keep}")
    if np.ptp(y) == 0:
        raise SelectionError("target is constant")
    active = list(range(len(names)))
    eliminated = []
    importances = np.zeros(len(names))
    while True:
        forest = RandomForestRegressor(n_estimators=n_trees, max_features="sqrt",
                                       random_state=seed, n_jobs=1)
        forest.fit(X[:, active], y)
        imp = forest.feature_importances_
        importances[:] = 0.0
        importances[active] = imp
        if len(active) == keep:
            break
        worst = min(range(len(active)), key=lambda i: (imp[i], -active[i]))
        eliminated.append(active.pop(worst))
    survivors = sorted(active, key=lambda j: (-importances[j], j))
    order = survivors + eliminated[::-1]
    ranking = tuple(names[j] for j in order)
    # score = reversed position so later eliminations score higher
    scores = {names[j]: float(len(order) - pos) for pos, j in enumerate(order)}
    return RankedSet(RFE, tuple(names[j] for j in survivors), ranking, scores)


def histogram_mi(x: np.ndarray, y: np.ndarray, bins: int = 16) -> float:
    """Plug-in mutual information (nats) from equal-width 2-D histograms."""
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    joint, _, _ = np.histogram2d(x, y, bins=bins)
    pxy = joint / joint.sum()
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = pxy > 0
    return float(np.sum(pxy[nz] * np.log(pxy[nz] / (px @ py)[nz])))


def select_mutual_info(X, y, keep: int, names=None, bins: int = 16) -> RankedSet:
    X, y, names = _as_matrix(X, y, names)
    if not 1 <= keep <= len(names):
        raise SelectionError(f"keep must be in [1, {len(names)}], got {keep}")
    scores = {n: histogram_mi(X[:, j], y, bins) for j, n in enumerate(names)}
    ranking = _order(names, scores)
    return RankedSet(MI, ranking[:keep], ranking, scores)


def ensemble_vote(results, n_keep: int = 15, min_votes: int = 2,
                  order: tuple[str, ...] | None = None) -> SelectionResult:
    """Majority vote across selectors, topped up or cut by mean rank.

    ``results`` is an iterable of :class:`RankedSet` (any order). Ties in mean
    rank fall back to ``order`` (catalog order), then name.
    """
    results = sorted(results, key=lambda r: r.method)
    universe = set()
    for r in results:
        universe.update(r.ranking)
    order = tuple(order) if order is not None else tuple(sorted(universe))

    def pos(name):
        return (order.index(name) if name in order else len(order), name)

    votes = {n: tuple(r.method for r in results if n in r.selected) for n in universe}
    ranks = {n: float(np.mean([r.rank_of(n) for r in results if n in r.ranking])) for n in universe}
    by_rank = sorted(universe, key=lambda n: (ranks[n], *pos(n)))
    eligible = [n for n in by_rank if len(votes[n]) >= min_votes]
    if len(eligible) >= n_keep:
        chosen = eligible[:n_keep]
    else:
        rest = [n for n in by_rank if n not in eligible]
        chosen = eligible + rest[:n_keep - len(eligible)]
    kept = tuple(sorted(chosen, key=pos))
    return SelectionResult(kept, {n: votes[n] for n in sorted(universe, key=pos)},
                           {n: ranks[n] for n in sorted(universe, key=pos)})


def select_features(X, y, names, n_keep: int = 15, corr_threshold: float = 0.05,
                    mi_bins: int = 16, n_trees: int = 100, seed: int = 0) -> SelectionResult:
    names = tuple(names)
    return ensemble_vote([
        select_correlation(X, y, names, corr_threshold),
        select_rfe(X, y, n_keep, names, n_trees, seed),
        select_mutual_info(X, y, n_keep, names, mi_bins),
    ], n_keep=n_keep, order=names)
