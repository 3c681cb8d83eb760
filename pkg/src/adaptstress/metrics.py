"""Forecast error metrics and the inverse coefficient of variation.

Undefined Pearson correlations are reported as NaN and zero-dispersion inverse
CVs as +inf (``UNBOUNDED``); neither is ever silently replaced by a number.
"""
from __future__ import annotations

import math

import numpy as np

from .numerics import ContractError

UNBOUNDED = math.inf


def _pair(y, y_hat, min_len: int = 1) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape:
        raise ContractError(f"length mismatch: {y.size} vs {y_hat.size}")
    if y.size < min_len:
        raise ContractError(f"need at least {min_len} value(s)")
    return y, y_hat


def pointwise_errors(y, y_hat) -> tuple[float, float, float]:
    """(MSE, MAE, RMSE)."""
    y, y_hat = _pair(y, y_hat)
    d = y_hat - y
    mse = float(np.mean(d * d))
    return mse, float(np.mean(np.abs(d))), math.sqrt(mse)


def pearson_r(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat, 2)
    yc, pc = y - y.mean(), y_hat - y_hat.mean()
    sy, sp = float(yc @ yc), float(pc @ pc)
    if sy == 0.0 or sp == 0.0:
        return math.nan
    r = float(yc @ pc) / math.sqrt(sy * sp)
    return max(-1.0, min(1.0, r))


def trend_direction_accuracy(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat, 2)
    return float(np.mean(np.sign(np.diff(y)) == np.sign(np.diff(y_hat))))


def inverse_cv(values) -> float:
    """Mean over population standard deviation; +inf when the spread is zero."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 2:
        raise ContractError("inverse CV needs at least 2 values")
    sd = float(v.std())
    if sd == 0.0:
        return UNBOUNDED
    return float(v.mean()) / sd


def metric_bundle(y, y_hat) -> dict[str, float]:
    """Pooled metrics over all horizon days plus per-horizon breakdowns.

    ``y``/``y_hat`` are (N, w_out). Pooled MSE/MAE/RMSE/r use all values; the
    pooled TDA is the mean of the per-horizon TDAs (each a chronological series).
    """
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    y_hat = np.atleast_2d(np.asarray(y_hat, dtype=np.float64))
    if y.shape != y_hat.shape:
        raise ContractError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    mse, mae, rmse = pointwise_errors(y, y_hat)
    out = {"mse": mse, "mae": mae, "rmse": rmse,
           "pearson_r": pearson_r(y, y_hat) if y.size >= 2 else math.nan}
    tdas = []
    for h in range(y.shape[1]):
        m, a, r = pointwise_errors(y[:, h], y_hat[:, h])
        out[f"mse_h{h + 1}"], out[f"mae_h{h + 1}"], out[f"rmse_h{h + 1}"] = m, a, r
        if y.shape[0] >= 2:
            out[f"pearson_r_h{h + 1}"] = pearson_r(y[:, h], y_hat[:, h])
            tdas.append(trend_direction_accuracy(y[:, h], y_hat[:, h]))
            out[f"tda_h{h + 1}"] = tdas[-1]
    out["tda"] = float(np.mean(tdas)) if tdas else math.nan
    return out
