"""Numeric substrate: float64 autograd (torch), Adam steps, LR schedule, checkpoints.

Checkpoint byte layout (all integers little-endian)::

    magic     4 bytes  b"ASCK"
    version   uint32   (currently 1)
    meta_len  uint32   then meta_len bytes of UTF-8 JSON
    count     uint32   number of tensor entries
    entry*    name_len uint16, name (UTF-8), ndim uint8, dims uint32 x ndim,
              data float64 x prod(dims), row-major

Optimizer state is stored as ordinary entries named ``adam.step/<param>``,
``adam.m/<param>`` and ``adam.v/<param>``.
"""
from __future__ import annotations

import json
import math
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Callable

import numpy as np
import torch

DTYPE = torch.float64
MAGIC = b"ASCK"
VERSION = 1


class ContractError(RuntimeError):
    pass


class ConfigurationError(ValueError):
    pass


def tensor(data) -> torch.Tensor:
    return torch.as_tensor(np.asarray(data, dtype=np.float64), dtype=DTYPE)


def backward(loss: torch.Tensor) -> None:
    if loss.dim() != 0:
        raise ContractError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    loss.backward()


def make_adam(params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=betas, eps=eps)


def adam_step(optimizer: torch.optim.Optimizer, lr: float | None = None) -> None:
    """One bias-corrected Adam update, then clear gradients."""
    params = [p for g in optimizer.param_groups for p in g["params"]]
    if all(p.grad is None for p in params):
        raise ContractError("adam_step called before backward")
    if lr is not None:
        for g in optimizer.param_groups:
            g["lr"] = lr
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)


def cosine_warmup_lr(epoch: int, warmup: int, total: int, lr_max: float) -> float:
    """Linear ramp from 0 to ``lr_max`` over ``warmup`` epochs, then half-cosine decay."""
    if not (0 <= warmup < total) or not (0 <= epoch < total):
        raise ConfigurationError(f"invalid schedule bounds epoch={epoch} warmup={warmup} total={total}")
    if epoch < warmup:
        return lr_max * epoch / warmup
    return lr_max * 0.5 * (1.0 + math.cos(math.pi * (epoch - warmup) / (total - warmup)))


def check_finite(t: torch.Tensor, what: str = "tensor") -> None:
    if not torch.isfinite(t).all():
        raise FloatingPointError(f"non-finite values in {what}")


def finite_difference_grad(fn: Callable[[], torch.Tensor], param: torch.Tensor,
                           h: float = 1e-5) -> torch.Tensor:
    """Central-difference gradient of scalar ``fn()`` w.r.t. ``param`` (perturbed in place)."""
    grad = torch.zeros_like(param)
    flat = param.data.view(-1)
    g = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = fn().item()
            flat[i] = orig - h
            down = fn().item()
            flat[i] = orig
            g[i] = (up - down) / (2 * h)
    return grad


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    num = torch.linalg.vector_norm(a - b).item()
    den = max(torch.linalg.vector_norm(a).item(), torch.linalg.vector_norm(b).item(), 1e-12)
    return num / den


def _write_entry(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    arr = np.asarray(arr, dtype="<f8", order="C")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def save_checkpoint(path: str | Path, model: torch.nn.Module,
                    optimizer: torch.optim.Optimizer | None = None, meta: dict | None = None) -> None:
    entries: list[tuple[str, np.ndarray]] = [
        (name, p.detach().cpu().numpy()) for name, p in model.state_dict().items()]
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                st = optimizer.state.get(p)
                if not st:
                    continue
                n = names[id(p)]
                entries.append((f"adam.step/{n}", np.asarray(float(st["step"]))))
                entries.append((f"adam.m/{n}", st["exp_avg"].detach().cpu().numpy()))
                entries.append((f"adam.v/{n}", st["exp_avg_sq"].detach().cpu().numpy()))
    meta_raw = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(meta_raw)))
        fh.write(meta_raw)
        fh.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            _write_entry(fh, name, arr)


def read_checkpoint(path: str | Path) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ContractError(f"{path}: not a checkpoint file")
    version, meta_len = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    meta = json.loads(data[off:off + meta_len].decode("utf-8"))
    off += meta_len
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    entries: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        entries[name] = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).copy()
        off += 8 * n
    return entries, meta


def load_checkpoint(path: str | Path, model: torch.nn.Module,
                    optimizer: torch.optim.Optimizer | None = None) -> dict:
    """Restore parameters (and Adam moments, if given an optimizer); return the meta dict."""
    entries, meta = read_checkpoint(path)
    state = {k: torch.as_tensor(v, dtype=DTYPE) for k, v in entries.items() if not k.startswith("adam.")}
    model.load_state_dict(state)
    if optimizer is not None:
        params = dict(model.named_parameters())
        for name, p in params.items():
            if f"adam.m/{name}" in entries:
                optimizer.state[p] = {
                    "step": torch.tensor(float(entries[f"adam.step/{name}"])),
                    "exp_avg": torch.as_tensor(entries[f"adam.m/{name}"], dtype=DTYPE),
                    "exp_avg_sq": torch.as_tensor(entries[f"adam.v/{name}"], dtype=DTYPE),
                }
    return meta
