"""Selective test-time adaptation: the decision cascade and consistency fine-tuning."""
from __future__ import annotations

import copy
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .model import AdaptStress
from .numerics import DTYPE, ContractError, adam_step, backward, make_adam
from .shift import DEFAULT_WEIGHTS, ShiftReport, shift_report
from .windowing import WindowSet


class DecisionError(RuntimeError):
    pass


class Stage(str, enum.Enum):
    HISTORY_APPLY = "HISTORY_APPLY"
    HISTORY_SKIP = "HISTORY_SKIP"
    LOW_SHIFT_SKIP = "LOW_SHIFT_SKIP"
    PROBE_APPLY = "PROBE_APPLY"
    PROBE_SKIP = "PROBE_SKIP"


APPLYING = {Stage.HISTORY_APPLY, Stage.PROBE_APPLY}


@dataclass(frozen=True)
class TtaThresholds:
    history_improve: float = 0.02
    history_degrade: float = -0.05
    min_history: int = 3
    low_shift: float = 0.3
    high_shift: float = 0.6
    probe_improve: float = 0.02


@dataclass(frozen=True)
class TtaSettings:
    epochs: int = 10
    lr: float = 1e-4
    sigma1: float = 0.01
    sigma2: float = 0.02
    probe_epochs: int = 3
    batch_size: int = 32


@dataclass
class TtaDecision:
    apply: bool
    stage: Stage
    evidence: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.apply != (self.stage in APPLYING):
            raise DecisionError(f"apply={self.apply} contradicts stage {self.stage.value}")

    def to_dict(self) -> dict:
        return {"apply": self.apply, "stage": self.stage.value, "evidence": self.evidence}


class TtaHistoryStore:
    """Append-only per-participant record of past adaptation outcomes (JSON lines).

    A change is the signed relative error reduction TTA achieved in a past
    run: +0.03 means adaptation lowered the error by 3%. ``path=None`` keeps
    the store in memory.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._rows: list[dict] = []
        if self.path is not None and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self._rows.append(json.loads(line))

    def entries(self, participant_id: str, exclude_run: str | None = None) -> list[tuple[str, float]]:
        return [(r["run_id"], float(r["change"])) for r in self._rows
                if r["participant"] == participant_id and r["run_id"] != exclude_run]

    def has(self, participant_id: str, run_id: str) -> bool:
        return any(r["participant"] == participant_id and r["run_id"] == run_id for r in self._rows)

    def append(self, participant_id: str, run_id: str, change: float) -> None:
        if self.has(participant_id, run_id):
            return
        row = {"participant": participant_id, "run_id": run_id, "change": float(change)}
        self._rows.append(row)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def _features(windows) -> np.ndarray:
    return windows.aggregated() if isinstance(windows, WindowSet) else np.asarray(windows, dtype=np.float64)


def decide_tta(participant_id: str, history: list[float] | TtaHistoryStore, source, target,
               probe: Callable[[], float], thresholds: TtaThresholds = TtaThresholds(),
               weights: tuple[float, float, float] = DEFAULT_WEIGHTS,
               run_id: str | None = None, shift: ShiftReport | None = None) -> TtaDecision:
    """Four-stage cascade: history, history veto, shift gate, probe.

    ``history`` is either a list of past relative changes or a store (entries
    written by ``run_id`` itself are ignored so reruns replay the same
    decision). ``source``/``target`` are window sets or aggregated matrices;
    a precomputed ``shift`` report replaces them.
    ``probe()`` returns the relative validation improvement after a short
    adaptation and is only called when the earlier stages are inconclusive.
    """
    t = thresholds
    if isinstance(history, TtaHistoryStore):
        changes = [c for _, c in history.entries(participant_id, exclude_run=run_id)]
    else:
        changes = [float(c) for c in history]
    evidence: dict = {"history_n": len(changes)}
    if len(changes) >= t.min_history:
        mean_change = float(np.mean(changes))
        evidence["history_mean"] = mean_change
        if mean_change > t.history_improve:
            return TtaDecision(True, Stage.HISTORY_APPLY, evidence)
        if mean_change < t.history_degrade:
            return TtaDecision(False, Stage.HISTORY_SKIP, evidence)

    report = shift if shift is not None else shift_report(_features(source), _features(target), weights)
    evidence["shift"] = report.to_dict()
    if report.s_dist < t.low_shift:
        return TtaDecision(False, Stage.LOW_SHIFT_SKIP, evidence)

    # High shift, missing history, or the unassigned middle band all fall through to the probe.
    evidence["band"] = "high" if report.s_dist > t.high_shift else "middle"
    try:
        improvement = float(probe())
    except Exception as exc:
        raise DecisionError(f"{participant_id}: probe failed: {exc}") from exc
    if not math.isfinite(improvement):
        raise DecisionError(f"{participant_id}: probe returned {improvement}")
    evidence["probe_improvement"] = improvement
    if improvement > t.probe_improve:
        return TtaDecision(True, Stage.PROBE_APPLY, evidence)
    return TtaDecision(False, Stage.PROBE_SKIP, evidence)


def consistency_loss(model: AdaptStress, x: torch.Tensor, sigma1: float, sigma2: float) -> torch.Tensor:
    """Mean of the three pairwise MSEs between clean and two noised predictions."""
    y0 = model(x).y_hat
    y1 = model(x + sigma1 * torch.randn_like(x)).y_hat
    y2 = model(x + sigma2 * torch.randn_like(x)).y_hat
    return (torch.mean((y0 - y1) ** 2) + torch.mean((y0 - y2) ** 2) + torch.mean((y1 - y2) ** 2)) / 3.0


def adapt_consistency(model: AdaptStress, windows, settings: TtaSettings = TtaSettings(),
                      epochs: int | None = None, seed: int = 0) -> tuple[AdaptStress, list[float]]:
    """Fine-tune a copy of ``model`` on unlabeled inputs; returns (copy, per-epoch loss).

    Dropout is off during adaptation so the loss measures sensitivity to the
    input noise only. The discriminator is frozen.
    """
    inputs = windows.inputs if isinstance(windows, WindowSet) else windows
    x_all = torch.as_tensor(np.asarray(inputs), dtype=DTYPE)
    if x_all.shape[0] == 0:
        raise ContractError("cannot adapt on an empty test set")
    epochs = settings.epochs if epochs is None else epochs
    adapted = copy.deepcopy(model)
    adapted.eval()
    opt = make_adam(adapted.adaptable_parameters(), settings.lr)
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    curve = []
    n = x_all.shape[0]
    for _ in range(epochs):
        perm = torch.randperm(n, generator=gen)
        total = 0.0
        for start in range(0, n, settings.batch_size):
            xb = x_all[perm[start:start + settings.batch_size]]
            loss = consistency_loss(adapted, xb, settings.sigma1, settings.sigma2)
            backward(loss)
            adam_step(opt)
            total += loss.item() * xb.shape[0]
        curve.append(total / n)
    for p in adapted.parameters():
        p.grad = None
    return adapted, curve


def probe_improvement(model: AdaptStress, val: WindowSet, settings: TtaSettings = TtaSettings(),
                      seed: int = 0) -> float:
    """Relative val-MSE reduction after ``probe_epochs`` of adaptation on the validation inputs."""
    y = torch.as_tensor(val.targets, dtype=DTYPE)
    before = float(torch.mean((model.predict(val.inputs) - y) ** 2))
    adapted, _ = adapt_consistency(model, val, settings, epochs=settings.probe_epochs, seed=seed)
    after = float(torch.mean((adapted.predict(val.inputs) - y) ** 2))
    if before == 0.0:
        return 0.0
    return (before - after) / before
