"""Leave-one-participant-out evaluation, baselines, uncertainty bands and the window sweep."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import seeding
from .config import RunConfig
from .data import Cohort
from .metrics import metric_bundle
from .model import AdaptStress
from .numerics import DTYPE, ContractError, save_checkpoint
from .reporting import write_csv, write_json
from .training import train_phase1
from .tta import TtaHistoryStore, adapt_consistency, decide_tta, probe_improvement
from .windowing import FoldAssignment, FoldData, FoldError, WindowSet, assemble_fold

log = logging.getLogger(__name__)

VARIANTS = ("adaptstress", "no_tta", "forced_tta", "persistence", "global_mean")
POOLED_METRICS = ("mse", "mae", "rmse", "pearson_r", "tda")
SWEEP_HEADER = ["w_in", "w_out", "model_variant", "metric", "mean", "std"]


def assign_folds(participant_ids: list[str], seed: int) -> list[FoldAssignment]:
    """Fold i tests participant i; its validation participant is drawn with a fold-scoped RNG."""
    folds = []
    for pid in participant_ids:
        others = [p for p in participant_ids if p != pid]
        val = others[int(seeding.rng(seed, "fold", pid, "val").integers(len(others)))]
        folds.append(FoldAssignment(pid, val, tuple(p for p in others if p != val)))
    return folds


def persistence_forecast(windows: WindowSet) -> np.ndarray:
    """Repeat the last observed (scaled) stress over the horizon."""
    return np.repeat(windows.history_stress[:, -1:], windows.w_out, axis=1)


def global_mean_forecast(windows: WindowSet, train_mean: float) -> np.ndarray:
    return np.full(windows.targets.shape, float(train_mean))


def baselines(windows: WindowSet, train_mean: float) -> dict[str, dict[str, float]]:
    return {"persistence": metric_bundle(windows.targets, persistence_forecast(windows)),
            "global_mean": metric_bundle(windows.targets, global_mean_forecast(windows, train_mean))}


@torch.no_grad()
def uncertainty_band(model: AdaptStress, inputs, passes: int = 30, seed: int = 0,
                     z: float = 1.96) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stochastic-forward (dropout on) mean and mean -/+ z*std per window and horizon day."""
    if passes < 2:
        raise ContractError("uncertainty band needs at least 2 passes")
    x = torch.as_tensor(np.asarray(inputs), dtype=DTYPE)
    was_training = model.training
    model.train()
    torch.manual_seed(seed)
    draws = torch.stack([model(x).y_hat for _ in range(passes)]).numpy()
    model.train(was_training)
    mean, sd = draws.mean(axis=0), draws.std(axis=0)
    return mean, mean - z * sd, mean + z * sd


@dataclass
class FoldResult:
    test: str
    val: str
    train: tuple[str, ...]
    features: tuple[str, ...]
    metrics: dict[str, dict[str, float]]
    decision: dict
    tta_change: float
    train_record: dict
    adapt_curve: list[float]
    predictions: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"test": self.test, "val": self.val, "train": list(self.train),
                "features": list(self.features), "metrics": self.metrics,
                "decision": self.decision, "tta_change": self.tta_change,
                "train_record": self.train_record, "adapt_curve": self.adapt_curve,
                "predictions": self.predictions}


@dataclass
class FoldArtifacts:
    """In-memory leftovers of a fold that later stages (explanations) reuse."""
    data: FoldData
    model: AdaptStress


def _relative_change(before: float, after: float) -> float:
    return (before - after) / before if before > 0 else 0.0


def run_fold(cohort: Cohort, assignment: FoldAssignment, cfg: RunConfig, w_in: int, w_out: int,
             history: list[float]) -> tuple[FoldResult, FoldArtifacts]:
    pid = assignment.test
    seed = cfg.seed
    try:
        data = assemble_fold(cohort, assignment, w_in, w_out,
                             cfg.selection_settings(seeding.sub_seed(seed, "selection", pid) % 2**32))
        n_train = len(assignment.train)
        mcfg = cfg.model_config(len(data.selection.kept), n_train if n_train >= 2 else None, w_in, w_out)
        model, record = train_phase1(data.train, data.val, mcfg,
                                     cfg.train_settings(seeding.sub_seed(seed, "train", pid)))
        tta = cfg.tta_settings()
        decision = decide_tta(
            pid, history, data.train, data.test,
            probe=lambda: probe_improvement(model, data.val, tta, seeding.sub_seed(seed, "probe", pid)),
            thresholds=cfg.thresholds(), weights=cfg.shift_weights)
        adapted, curve = adapt_consistency(model, data.test, tta, seed=seeding.sub_seed(seed, "tta", pid))
    except FoldError as exc:
        raise FoldError(f"fold {pid}: {exc}") from exc

    y = data.test.targets
    preds = {"no_tta": model.predict(data.test.inputs).numpy(),
             "forced_tta": adapted.predict(data.test.inputs).numpy()}
    primary = {"none": "no_tta", "forced": "forced_tta"}.get(
        cfg.tta_mode, "forced_tta" if decision.apply else "no_tta")
    preds["adaptstress"] = preds[primary]
    metrics = {v: metric_bundle(y, preds[v]) for v in ("adaptstress", "no_tta", "forced_tta")}
    metrics.update(baselines(data.test, data.train_stress_mean))
    metrics = {v: metrics[v] for v in VARIANTS}

    band_model = adapted if primary == "forced_tta" else model
    mean, lower, upper = uncertainty_band(band_model, data.test.inputs, cfg.uncertainty_passes,
                                          seeding.sub_seed(seed, "band", pid))
    change = _relative_change(metrics["no_tta"]["rmse"], metrics["forced_tta"]["rmse"])
    result = FoldResult(
        pid, assignment.val, assignment.train, data.selection.kept, metrics, decision.to_dict(),
        change, record.to_dict(), curve,
        {"anchor_dates": data.test.anchor_dates, "target": y, "prediction": preds["adaptstress"],
         "band_mean": mean, "band_lower": lower, "band_upper": upper,
         "persistence": persistence_forecast(data.test)})
    return result, FoldArtifacts(data, model)


def aggregate(folds: list[FoldResult]) -> dict[str, dict[str, tuple[float, float]]]:
    """Unweighted mean and population std over folds, per variant and pooled metric."""
    out = {}
    for v in VARIANTS:
        out[v] = {}
        for m in POOLED_METRICS:
            vals = np.array([f.metrics[v][m] for f in folds], dtype=np.float64)
            out[v][m] = (float(np.mean(vals)), float(np.std(vals)))
    return out


@dataclass
class LoocvResult:
    w_in: int
    w_out: int
    folds: list[FoldResult]
    aggregate: dict
    artifacts: dict[str, FoldArtifacts] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)

    def fold(self, pid: str) -> FoldResult:
        return next(f for f in self.folds if f.test == pid)


def _fold_worker(args):
    torch.set_num_threads(1)
    cohort, assignment, cfg, w_in, w_out, history = args
    t0 = time.perf_counter()
    result, art = run_fold(cohort, assignment, cfg, w_in, w_out, history)
    return result, art.data, art.model.config, art.model.state_dict(), time.perf_counter() - t0


def run_loocv(cohort: Cohort, cfg: RunConfig, w_in: int | None = None, w_out: int | None = None,
              history: TtaHistoryStore | None = None, run_id: str = "run",
              out_dir: str | Path | None = None, manifest_hash: str | None = None) -> LoocvResult:
    """All folds (optionally in ``cfg.jobs`` processes), then a deterministic reduce.

    TTA history is read before any fold runs and appended afterwards in fold
    order, so the result does not depend on scheduling.
    """
    w_in = w_in or cfg.w_in
    w_out = w_out or cfg.w_out
    history = history if history is not None else TtaHistoryStore()
    folds = assign_folds(cohort.ids, cfg.seed)
    tag = f"{run_id}/w{w_in}p{w_out}"
    jobs = [(cohort, a, cfg, w_in, w_out,
             [c for _, c in history.entries(a.test, exclude_run=tag)]) for a in folds]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outs = list(pool.map(_fold_worker, jobs))
    else:
        outs = [_fold_worker(j) for j in jobs]

    results, artifacts, timings = [], {}, {}
    for result, data, mcfg, state, secs in outs:
        model = AdaptStress(mcfg)
        model.load_state_dict(state)
        model.eval()
        results.append(result)
        artifacts[result.test] = FoldArtifacts(data, model)
        timings[result.test] = secs
        log.info("fold %s: rmse %.4f (persistence %.4f) tta=%s in %.1fs", result.test,
                 result.metrics["adaptstress"]["rmse"], result.metrics["persistence"]["rmse"],
                 result.decision["stage"], secs)
    for r in results:
        history.append(r.test, tag, r.tta_change)
    res = LoocvResult(w_in, w_out, results, aggregate(results), artifacts, timings)
    if out_dir is not None:
        write_loocv(res, out_dir, manifest_hash, cfg.save_checkpoints)
    return res


def write_loocv(res: LoocvResult, out_dir: str | Path, manifest_hash: str | None,
                checkpoints: bool = True) -> None:
    out = Path(out_dir)
    for f in res.folds:
        write_json(out / f"fold_{f.test}.json", {"manifest_hash": manifest_hash, "w_in": res.w_in,
                                                 "w_out": res.w_out, **f.to_dict()})
        if checkpoints:
            art = res.artifacts[f.test]
            save_checkpoint(out / f"fold_{f.test}.ckpt", art.model,
                            meta={"manifest_hash": manifest_hash, "test": f.test,
                                  "model_config": art.model.config.to_dict(),
                                  "features": list(f.features)})
    write_json(out / "aggregate.json", {"manifest_hash": manifest_hash, "w_in": res.w_in,
                                        "w_out": res.w_out, "aggregate": res.aggregate})


def sweep_rows(results: list[LoocvResult]) -> list[list]:
    rows = []
    for r in sorted(results, key=lambda r: (r.w_in, r.w_out)):
        for v in VARIANTS:
            for m in POOLED_METRICS:
                mean, std = r.aggregate[v][m]
                rows.append([r.w_in, r.w_out, v, m, mean, std])
    return rows


def write_sweep_report(results: list[LoocvResult], path: str | Path, manifest_hash: str | None) -> Path:
    return write_csv(path, SWEEP_HEADER, sweep_rows(results), manifest_hash)


def run_sweep(cohort: Cohort, cfg: RunConfig, out_dir: str | Path, history: TtaHistoryStore | None = None,
              run_id: str = "run", manifest_hash: str | None = None) -> list[LoocvResult]:
    """LOO-CV at every (w_in, w_out) grid cell; each cell's fold files go to ``w<in>_p<out>/``."""
    out = Path(out_dir)
    history = history if history is not None else TtaHistoryStore()
    results = []
    for w_in in cfg.w_in_grid:
        for w_out in cfg.w_out_grid:
            results.append(run_loocv(cohort, cfg, w_in, w_out, history, run_id,
                                     out / f"w{w_in}_p{w_out}", manifest_hash))
    write_sweep_report(results, out / "sweep_report.csv", manifest_hash)
    return results


def radar_rows(results: list[LoocvResult]) -> list[list]:
    """Per-participant (MAE, MSE, RMSE) triples per variant and grid cell."""
    rows = []
    for r in sorted(results, key=lambda r: (r.w_in, r.w_out)):
        for f in sorted(r.folds, key=lambda f: f.test):
            for v in VARIANTS:
                m = f.metrics[v]
                rows.append([r.w_in, r.w_out, f.test, v, m["mae"], m["mse"], m["rmse"]])
    return rows


def is_degenerate(value: float) -> bool:
    return value is None or not math.isfinite(value)
