"""Kernel SHAP over temporally aggregated features, plus cohort summaries.

A coalition keeps the explained window's daily values for its member
features and takes the other features' daily values from a background
window; the value of a coalition is the model output averaged over the
background set. Attributions are therefore per feature, aggregated over the
input days.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import seeding
from .metrics import inverse_cv
from .model import AdaptStress
from .numerics import DTYPE
from .reporting import write_csv, write_json

ModelFn = Callable[[np.ndarray], np.ndarray]


class ShapError(RuntimeError):
    pass


def temporal_aggregate(window: np.ndarray) -> np.ndarray:
    """Per-feature mean over the input days of a (w_in, d) window."""
    return np.asarray(window, dtype=np.float64).mean(axis=0)


def shapley_kernel_weight(M: int, z: int) -> float:
    if not 0 < z < M:
        raise ValueError(f"kernel weight undefined for coalition size {z} of {M}")
    return (M - 1) / (math.comb(M, z) * z * (M - z))


def model_output_fn(model: AdaptStress, horizon: int = 0, batch_size: int = 4096) -> ModelFn:
    """Wrap a model as windows (N, w_in, d) -> outputs (N,) for one horizon day."""
    def f(x: np.ndarray) -> np.ndarray:
        return model.predict(torch.as_tensor(x, dtype=DTYPE), batch_size)[:, horizon].numpy()
    return f


def coalition_values(f: ModelFn, sample: np.ndarray, background: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """v(S) for each boolean row of ``masks``: mean model output over the background."""
    masks = np.asarray(masks, dtype=bool)
    C, B = masks.shape[0], background.shape[0]
    if C == 0:
        return np.zeros(0)
    keep = masks[:, None, None, :]
    stacked = np.where(keep, sample[None, None], background[None])   # (C, B, w_in, d)
    out = f(stacked.reshape(C * B, *sample.shape))
    return out.reshape(C, B).mean(axis=1)


@dataclass
class ShapAttribution:
    base_value: float
    phi: np.ndarray
    output: float
    features: tuple[str, ...]
    participant_id: str = ""
    sample_index: int = -1
    exact: bool = True

    @property
    def efficiency_residual(self) -> float:
        return abs(self.base_value + float(self.phi.sum()) - self.output)


def _all_masks(M: int) -> np.ndarray:
    rows = [[(k >> j) & 1 for j in range(M)] for k in range(1, 2 ** M - 1)]
    return np.array(rows, dtype=bool).reshape(-1, M)


def _sampled_masks(M: int, n: int, g: np.random.Generator) -> np.ndarray:
    """Paired (coalition, complement) draws; size chosen proportional to total kernel mass."""
    sizes = np.arange(1, M)
    mass = np.array([(M - 1) / (s * (M - s)) for s in sizes])
    sizes_drawn = g.choice(sizes, size=max(n // 2, 1), p=mass / mass.sum())
    masks = []
    for s in sizes_drawn:
        m = np.zeros(M, dtype=bool)
        m[g.choice(M, size=s, replace=False)] = True
        masks += [m, ~m]
    return np.array(masks[:max(n, 2)])


def solve_constrained(masks: np.ndarray, values: np.ndarray, weights: np.ndarray,
                      base: float, full: float) -> np.ndarray:
    """Weighted least squares for phi subject to sum(phi) = full - base.

    The last coefficient is eliminated with the constraint, leaving an
    unconstrained problem in M - 1 unknowns.
    """
    Z = masks.astype(np.float64)
    M = Z.shape[1]
    delta = full - base
    if M == 1:
        return np.array([delta])
    A = Z[:, :-1] - Z[:, -1:]
    b = values - base - Z[:, -1] * delta
    sw = np.sqrt(weights)
    Aw, bw = A * sw[:, None], b * sw
    gram = Aw.T @ Aw
    if np.linalg.matrix_rank(gram) < M - 1:
        raise ShapError("coalition design is singular; increase n_coalitions")
    head = np.linalg.solve(gram, Aw.T @ bw)
    return np.append(head, delta - head.sum())


def kernel_shap(f: ModelFn, sample: np.ndarray, background: np.ndarray, features: tuple[str, ...],
                n_coalitions: int = 4096, seed: int = 0) -> ShapAttribution:
    """Shapley values of ``f`` at ``sample`` (w_in, d) against ``background`` (B, w_in, d).

    Enumerates every coalition when 2^M - 2 <= n_coalitions (exact Shapley
    values); otherwise samples coalitions with the seeded RNG.
    """
    sample = np.asarray(sample, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    M = sample.shape[-1]
    if background.ndim != 3 or background.shape[1:] != sample.shape:
        raise ShapError("background must be (B, w_in, d) matching the sample")
    base = float(f(background).mean())
    full = float(f(sample[None])[0])
    exact = 2 ** M - 2 <= n_coalitions
    if exact:
        masks = _all_masks(M)
        weights = np.array([shapley_kernel_weight(M, int(k)) for k in masks.sum(axis=1)])
    else:
        masks = _sampled_masks(M, n_coalitions, np.random.default_rng(seed))
        weights = np.ones(len(masks))
    values = coalition_values(f, sample, background, masks) if len(masks) else np.zeros(0)
    phi = solve_constrained(masks, values, weights, base, full) if M > 1 else np.array([full - base])
    return ShapAttribution(base, phi, full, tuple(features), exact=exact)


@dataclass
class ImportanceSummary:
    features: tuple[str, ...]
    importance: dict[str, float]
    direction: dict[str, float]
    per_participant: dict[str, dict[str, dict[str, float]]]

    @property
    def ranking(self) -> list[str]:
        return sorted(self.features, key=lambda a: (-self.importance[a], self.features.index(a)))


def aggregate_importance(attributions: dict[str, list[ShapAttribution]],
                         features: tuple[str, ...]) -> ImportanceSummary:
    """Cohort importance = mean over participants of their mean |phi|; direction likewise signed.

    A feature absent from a participant's model (not selected in that fold)
    contributes zero for that participant.
    """
    per = {}
    for pid in sorted(attributions):
        atts = attributions[pid]
        if not atts:
            raise ShapError(f"no attributions for {pid}")
        rows = {a: {"importance": 0.0, "direction": 0.0} for a in features}
        for a in features:
            vals = [att.phi[att.features.index(a)] for att in atts if a in att.features]
            if vals:
                rows[a] = {"importance": float(np.mean(np.abs(vals))),
                           "direction": float(np.mean(vals))}
        per[pid] = rows
    imp = {a: float(np.mean([per[p][a]["importance"] for p in per])) for a in features}
    direction = {a: float(np.mean([per[p][a]["direction"] for p in per])) for a in features}
    return ImportanceSummary(tuple(features), imp, direction, per)


def consistency_scores(summary: ImportanceSummary) -> dict[str, float]:
    """Inverse CV of each feature's per-participant importance (NaN with one participant)."""
    if len(summary.per_participant) < 2:
        return {a: math.nan for a in summary.features}
    return {a: inverse_cv([summary.per_participant[p][a]["importance"] for p in summary.per_participant])
            for a in summary.features}


def explain_participant(model: AdaptStress, train_inputs: np.ndarray, test_inputs: np.ndarray,
                        features: tuple[str, ...], participant_id: str, n_background: int,
                        n_samples: int, n_coalitions: int, seed: int) -> list[ShapAttribution]:
    """Attributions for ``n_samples`` test windows drawn uniformly (seeded)."""
    g = seeding.rng(seed, "shap", participant_id)
    bg_idx = np.sort(g.choice(len(train_inputs), size=min(n_background, len(train_inputs)), replace=False))
    smp_idx = np.sort(g.choice(len(test_inputs), size=min(n_samples, len(test_inputs)), replace=False))
    f = model_output_fn(model)
    background = train_inputs[bg_idx]
    out = []
    for k, i in enumerate(smp_idx):
        att = kernel_shap(f, test_inputs[i], background, features, n_coalitions,
                          seeding.sub_seed(seed, "shap", participant_id, k))
        att.participant_id, att.sample_index = participant_id, int(i)
        out.append(att)
    return out


def write_explanations(attributions: dict[str, list[ShapAttribution]], universe: tuple[str, ...],
                       out_dir: str | Path, manifest_hash: str | None, settings: dict) -> dict:
    summary = aggregate_importance(attributions, universe)
    consistency = consistency_scores(summary)
    doc = {"manifest_hash": manifest_hash, "settings": settings, "features": list(universe),
           "importance": summary.importance, "direction": summary.direction,
           "consistency": consistency, "ranking": summary.ranking,
           "per_participant": summary.per_participant}
    out = Path(out_dir)
    write_json(out / "shap_summary.json", doc)
    for pid, atts in sorted(attributions.items()):
        feats = atts[0].features
        rows = [[a.sample_index, a.base_value, a.output, *a.phi] for a in atts]
        write_csv(out / f"shap_{pid}.csv", ["sample_index", "base_value", "output", *feats],
                  rows, manifest_hash)
    return doc

