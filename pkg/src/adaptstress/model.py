"""AdaptStress network: feature attention -> temporal self-attention encoder ->
pooled regression head, with a gradient-reversed participant discriminator."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .numerics import DTYPE, ContractError


@dataclass
class ModelConfig:
    d_features: int = 15
    d_model: int = 128
    n_heads: int = 8
    n_layers: int = 2
    d_ff: int = 256
    w_in: int = 5
    w_out: int = 1
    n_domains: int | None = 14
    dropout: float = 0.1
    grl_alpha: float = 0.1
    scorer_hidden: int = 32
    head_hidden: int = 64

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.n_domains is not None and self.n_domains < 2:
            raise ValueError("n_domains must be at least 2")
        if not 0.0 <= self.grl_alpha <= 1.0:
            raise ValueError("grl_alpha must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


class GradientReversal(torch.autograd.Function):
    """Identity forward; multiplies the incoming gradient by -alpha backward."""

    @staticmethod
    def forward(ctx, x, alpha):
        ctx.alpha = alpha
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return -ctx.alpha * grad_output, None


def reverse_gradient(x: torch.Tensor, alpha: float) -> torch.Tensor:
    return GradientReversal.apply(x, alpha)


def sinusoidal_positions(length: int, d_model: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=DTYPE).unsqueeze(1)
    div = torch.exp(torch.arange(0, d_model, 2, dtype=DTYPE) * (-math.log(10000.0) / d_model))
    pe = torch.zeros(length, d_model, dtype=DTYPE)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : d_model // 2]
    return pe


class FeatureAttention(nn.Module):
    """Softmax weights over features from their per-window mean and std.

    Columns are scaled by ``d * weight`` so uniform weights leave the block unchanged.
    """

    def __init__(self, d_features: int, hidden: int = 32):
        super().__init__()
        self.d = d_features
        self.scorer = nn.Sequential(nn.Linear(2 * d_features, hidden), nn.Tanh(),
                                    nn.Linear(hidden, d_features))

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        mean = x.mean(dim=1)
        std = torch.sqrt(x.var(dim=1, unbiased=False) + 1e-12)
        weights = torch.softmax(self.scorer(torch.cat([mean, std], dim=-1)), dim=-1)
        return x * (self.d * weights).unsqueeze(1), weights


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.h = n_heads
        self.dk = d_model // n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        B, T, D = x.shape
        q, k, v = self.qkv(x).view(B, T, 3, self.h, self.dk).permute(2, 0, 3, 1, 4)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.dk), dim=-1)
        ctx = (attn @ v).transpose(1, 2).reshape(B, T, D)
        return self.out(ctx), attn


class EncoderLayer(nn.Module):
    def __init__(self, d_model: int, n_heads: int, d_ff: int, dropout: float):
        super().__init__()
        self.attn = MultiHeadSelfAttention(d_model, n_heads)
        self.norm1 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(nn.Linear(d_model, d_ff), nn.ReLU(), nn.Linear(d_ff, d_model))
        self.norm2 = nn.LayerNorm(d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        a, weights = self.attn(x)
        x = self.norm1(x + self.drop(a))
        x = self.norm2(x + self.drop(self.ff(x)))
        return x, weights


@dataclass
class ForwardOutput:
    y_hat: torch.Tensor                     # (B, w_out)
    feature_weights: torch.Tensor           # (B, d_features)
    domain_logits: torch.Tensor | None = None
    attention: list[torch.Tensor] | None = None


class AdaptStress(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        self.feature_attention = FeatureAttention(c.d_features, c.scorer_hidden)
        self.embed = nn.Linear(c.d_features, c.d_model)
        self.layers = nn.ModuleList(
            EncoderLayer(c.d_model, c.n_heads, c.d_ff, c.dropout) for _ in range(c.n_layers))
        self.head = nn.Sequential(nn.Linear(c.d_model, c.head_hidden), nn.ReLU(),
                                  nn.Dropout(c.dropout), nn.Linear(c.head_hidden, c.w_out))
        self.domain_head = None
        if c.n_domains is not None:
            self.domain_head = nn.Sequential(nn.Linear(c.d_model, c.head_hidden), nn.ReLU(),
                                             nn.Linear(c.head_hidden, c.n_domains))
        self.to(DTYPE)

    def _check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 3 or x.shape[-1] != self.config.d_features:
            raise ContractError(f"expected (batch, w_in, {self.config.d_features}) input, got {tuple(x.shape)}")

    def encode(self, x: torch.Tensor, keep_attention: bool = False):
        self._check_input(x)
        h = self.embed(x) + sinusoidal_positions(x.shape[1], self.config.d_model)
        maps = []
        for layer in self.layers:
            h, a = layer(h)
            if keep_attention:
                maps.append(a)
        return h, maps

    def forward(self, x: torch.Tensor, return_domain: bool = False, reverse: bool = True,
                return_attention: bool = False) -> ForwardOutput:
        x = torch.as_tensor(x, dtype=DTYPE)
        self._check_input(x)
        reweighted, fw = self.feature_attention(x)
        h, maps = self.encode(reweighted, return_attention)
        pooled = h.mean(dim=1)
        out = ForwardOutput(self.head(pooled), fw, attention=maps if return_attention else None)
        if return_domain:
            if self.domain_head is None:
                raise ContractError("return_domain requested but n_domains is unset")
            z = reverse_gradient(pooled, self.config.grl_alpha) if reverse else pooled
            out.domain_logits = self.domain_head(z)
        return out

    def adaptable_parameters(self):
        """Everything except the discriminator (frozen during test-time adaptation)."""
        skip = {id(p) for p in self.domain_head.parameters()} if self.domain_head is not None else set()
        return [p for p in self.parameters() if id(p) not in skip]

    @torch.no_grad()
    def predict(self, x, batch_size: int = 512) -> torch.Tensor:
        was_training = self.training
        self.eval()
        x = torch.as_tensor(x, dtype=DTYPE)
        outs = [self(x[i:i + batch_size]).y_hat for i in range(0, x.shape[0], batch_size)]
        self.train(was_training)
        return torch.cat(outs) if outs else torch.zeros(0, self.config.w_out, dtype=DTYPE)


def combined_loss(y_hat: torch.Tensor, y: torch.Tensor, domain_logits: torch.Tensor | None,
                  domain_label: torch.Tensor | None, alpha: float):
    """Return (total, prediction MSE, domain cross-entropy)."""
    y = torch.as_tensor(y, dtype=DTYPE)
    main = F.mse_loss(y_hat, y)
    if domain_logits is None:
        return main, main, torch.zeros((), dtype=DTYPE)
    labels = torch.as_tensor(domain_label, dtype=torch.long)
    n_dom = domain_logits.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_dom):
        raise ContractError(f"domain labels must lie in [0, {n_dom})")
    dom = F.cross_entropy(domain_logits, labels)
    return main + alpha * dom, main, dom
