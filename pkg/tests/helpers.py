"""Small builders for hand-made series."""
from __future__ import annotations

import datetime as dt

import numpy as np

from adaptstress.data import CATALOG, Flag, ParticipantSeries

START = dt.date(2024, 1, 1)


def make_series(pid="P01", n=10, fill=1.0, columns=None) -> ParticipantSeries:
    """Series of ``n`` days with every cell ``fill`` except the given columns."""
    values = np.full((n, len(CATALOG)), float(fill))
    for abbr, col in (columns or {}).items():
        values[:, CATALOG.index(abbr)] = np.asarray(col, dtype=np.float64)
    flags = np.where(np.isnan(values), Flag.MISSING_RAW, Flag.OK).astype(np.int8)
    dates = [START + dt.timedelta(days=i) for i in range(n)]
    return ParticipantSeries(pid, dates, values, flags)


def csv_text(rows: dict[str, dict[str, str]], default="1") -> str:
    """CSV body from {date: {abbr: token}}, all other cells ``default``."""
    lines = [",".join(["date", *CATALOG.abbreviations])]
    for day, cells in rows.items():
        lines.append(",".join([day, *(cells.get(a, default) for a in CATALOG.abbreviations)]))
    return "\n".join(lines) + "\n"


def tiny_trained_model(d: int = 6, w_in: int = 3, n: int = 60, epochs: int = 30, seed: int = 0):
    """A small model fitted briefly to a linear-plus-interaction target; returns (model, X)."""
    from adaptstress.model import ModelConfig
    from adaptstress.training import TrainSettings, train_phase1
    from adaptstress.windowing import WindowSet

    g = np.random.default_rng(seed)
    X = g.uniform(size=(n, w_in, d))
    agg = X.mean(axis=1)
    y = (agg @ np.linspace(-1, 1, d) + 0.5 * agg[:, 0] * agg[:, 1])[:, None]
    labels = np.arange(n) % 2
    ws = WindowSet(X, y, X[:, :, 0], np.array(["P"] * n), labels, [START] * n,
                   tuple(f"f{j}" for j in range(d)))
    cfg = ModelConfig(d_features=d, d_model=8, n_heads=2, n_layers=1, d_ff=16, w_in=w_in, w_out=1,
                      n_domains=2, dropout=0.1, scorer_hidden=8, head_hidden=8)
    model, _ = train_phase1(ws, ws, cfg, TrainSettings(epochs=epochs, patience=epochs, lr=3e-3, warmup=2,
                                                       batch_size=n, seed=seed))
    return model, X
