"""Phase-1 training: combined prediction + adversarial domain loss, early stopping."""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch

from .model import AdaptStress, ModelConfig, combined_loss
from .numerics import DTYPE, adam_step, backward, cosine_warmup_lr, make_adam
from .windowing import NO_DOMAIN, FoldError, WindowSet

log = logging.getLogger(__name__)

EARLY_STOP = "EARLY_STOP"
MAX_EPOCHS = "MAX_EPOCHS"


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainSettings:
    epochs: int = 350
    patience: int = 30
    lr: float = 5e-4
    warmup: int = 10
    batch_size: int = 32
    seed: int = 0


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_mse: float
    val_mse: float
    lr: float


@dataclass
class TrainRunRecord:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    best_val_mse: float = float("inf")
    stop_reason: str = MAX_EPOCHS

    def to_dict(self) -> dict:
        return {"epochs": [asdict(e) for e in self.epochs], "best_epoch": self.best_epoch,
                "best_val_mse": self.best_val_mse, "stop_reason": self.stop_reason}


def mse_on(model: AdaptStress, windows: WindowSet) -> float:
    pred = model.predict(windows.inputs)
    return float(torch.mean((pred - torch.as_tensor(windows.targets, dtype=DTYPE)) ** 2))


def train_phase1(train: WindowSet, val: WindowSet, config: ModelConfig,
                 settings: TrainSettings = TrainSettings(),
                 evaluate: Callable[[AdaptStress, int], float] | None = None
                 ) -> tuple[AdaptStress, TrainRunRecord]:
    """Train with MSE + alpha * domain CE; keep the parameters with the lowest val MSE.

    ``evaluate(model, epoch)`` overrides the validation metric (used for testing
    the stopping logic).
    """
    if len(train) == 0 or len(val) == 0:
        raise FoldError("empty train or validation set")
    if (train.domain_labels == NO_DOMAIN).any():
        raise FoldError("training windows must carry domain labels")
    s = settings
    torch.manual_seed(s.seed)
    order_rng = np.random.default_rng(s.seed)
    model = AdaptStress(config)
    opt = make_adam(model.parameters(), s.lr)
    warmup = min(s.warmup, s.epochs - 1)
    use_domain = config.n_domains is not None

    X = torch.as_tensor(train.inputs, dtype=DTYPE)
    Y = torch.as_tensor(train.targets, dtype=DTYPE)
    D = torch.as_tensor(train.domain_labels, dtype=torch.long)
    n = len(train)
    record = TrainRunRecord()
    best_state = copy.deepcopy(model.state_dict())
    stale = 0

    for epoch in range(s.epochs):
        lr = cosine_warmup_lr(epoch, warmup, s.epochs, s.lr)
        model.train()
        perm = order_rng.permutation(n)
        tot_loss = tot_mse = 0.0
        for start in range(0, n, s.batch_size):
            idx = torch.as_tensor(perm[start:start + s.batch_size])
            out = model(X[idx], return_domain=use_domain)
            loss, main, _ = combined_loss(out.y_hat, Y[idx], out.domain_logits, D[idx],
                                          config.grl_alpha)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {start}: "
                                    f"main={main.item()}")
            backward(loss)
            adam_step(opt, lr)
            tot_loss += loss.item() * len(idx)
            tot_mse += main.item() * len(idx)

        val_mse = evaluate(model, epoch) if evaluate is not None else mse_on(model, val)
        record.epochs.append(EpochStats(epoch, tot_loss / n, tot_mse / n, float(val_mse), lr))
        if val_mse < record.best_val_mse:
            record.best_val_mse = float(val_mse)
            record.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            stale = 0
        else:
            stale += 1
            if stale >= s.patience:
                record.stop_reason = EARLY_STOP
                break

    model.load_state_dict(best_state)
    model.eval()
    log.info("trained %d epochs, best epoch %d (val mse %.5f), %s",
             len(record.epochs), record.best_epoch, record.best_val_mse, record.stop_reason)
    return model, record
