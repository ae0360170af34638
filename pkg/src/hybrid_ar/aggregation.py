"""Self-attention aggregation: Conv1D(k=1) -> transformer encoder -> statistic pooling -> classifier."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn

from .errors import ConfigError, ContractError

STAT_POOL_EPS = 1e-5


@dataclass
class AggregationConfig:
    d_emb: int = 256
    d_attn: int = 256
    d_ff: int = 1024
    heads: int = 4
    n_layers: int = 3
    d_accent: int = 8
    dropout: float = 0.1
    positional_encoding: bool = True

    def __post_init__(self):
        if min(self.d_emb, self.d_attn, self.d_ff, self.heads, self.n_layers, self.d_accent) <= 0:
            raise ConfigError("aggregation sizes must be positive")
        if self.d_attn % self.heads:
            raise ConfigError(f"d_attn={self.d_attn} is not divisible by {self.heads} heads")

    @classmethod
    def full(cls, **overrides):
        kw = dict(d_emb=1024, d_attn=256, d_ff=1024, heads=4, n_layers=3, d_accent=8)
        kw.update(overrides)
        return cls(**kw)


@dataclass
class AccentPrediction:
    logits: torch.Tensor  # (B, d_accent)
    pooled: torch.Tensor  # (B, d_attn), A_c
    predicted: torch.Tensor  # (B,)
    attention: Optional[list] = None  # per layer (B, h, T, T)


def argmax_lowest(x: torch.Tensor) -> torch.Tensor:
    """Argmax over the last axis with ties resolved toward the lowest index."""
    is_max = x == x.amax(dim=-1, keepdim=True)
    idx = torch.arange(x.shape[-1], device=x.device).expand_as(x)
    return torch.where(is_max, idx, x.shape[-1]).amin(dim=-1)


class MultiHeadSelfAttention(nn.Module):
    """Scaled dot-product attention over ``h`` heads with Q = K = V = x."""

    def __init__(self, d_attn: int, heads: int, dropout: float = 0.0):
        super().__init__()
        if d_attn % heads:
            raise ConfigError(f"d_attn={d_attn} is not divisible by {heads} heads")
        self.heads = heads
        self.d_k = d_attn // heads
        self.w_q = nn.Linear(d_attn, d_attn)
        self.w_k = nn.Linear(d_attn, d_attn)
        self.w_v = nn.Linear(d_attn, d_attn)
        self.w_o = nn.Linear(d_attn, d_attn)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, valid: Optional[torch.Tensor] = None):
        """``x`` is (B, T, d_attn); ``valid`` a (B, T) bool mask. Returns (output, weights)."""
        B, T, D = x.shape
        if valid is None:
            valid = torch.ones(B, T, dtype=torch.bool, device=x.device)
        if not valid.any(dim=1).all():
            raise ContractError("attention needs at least one unmasked position per sequence")

        def split(t):
            return t.view(B, T, self.heads, self.d_k).transpose(1, 2)

        q, k, v = split(self.w_q(x)), split(self.w_k(x)), split(self.w_v(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_k)
        scores = scores.masked_fill(~valid[:, None, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        heads = self.drop(weights) @ v
        out = heads.transpose(1, 2).reshape(B, T, D)
        return self.w_o(out), weights


def mha(x, block: MultiHeadSelfAttention, valid=None):
    return block(x, valid)


def statistic_pool(x: torch.Tensor, lengths: Optional[torch.Tensor] = None,
                   eps: float = STAT_POOL_EPS) -> torch.Tensor:
    """[mean; std] over valid frames, population std with ``eps`` under the root.

    Accepts (T, d) or (B, T, d); returns (2d,) or (B, 2d).
    """
    squeeze = x.dim() == 2
    if squeeze:
        x = x.unsqueeze(0)
        lengths = None if lengths is None else torch.as_tensor(lengths).reshape(1)
    B, T, _ = x.shape
    if lengths is None:
        lengths = torch.full((B,), T, dtype=torch.long)
    lengths = torch.as_tensor(lengths)
    if (lengths < 1).any():
        raise ContractError("statistic pooling needs at least one valid frame")
    valid = (torch.arange(T)[None, :] < lengths[:, None]).unsqueeze(-1).to(x.dtype)
    n = lengths[:, None].to(x.dtype)
    mean = (x * valid).sum(1) / n
    var = (((x - mean[:, None, :]) ** 2) * valid).sum(1) / n
    out = torch.cat([mean, torch.sqrt(var + eps)], dim=-1)
    return out[0] if squeeze else out


def sinusoidal_encoding(T: int, d: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(T, dtype=torch.float64)[:, None]
    i = torch.arange(0, d, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / d)
    pe = torch.zeros(T, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : d // 2])
    return pe.to(dtype)


class EncoderLayer(nn.Module):
    """Pre-norm transformer encoder layer."""

    def __init__(self, d_attn, heads, d_ff, dropout):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_attn)
        self.attn = MultiHeadSelfAttention(d_attn, heads, dropout)
        self.norm2 = nn.LayerNorm(d_attn)
        self.ff = nn.Sequential(nn.Linear(d_attn, d_ff), nn.ReLU(), nn.Dropout(dropout),
                                nn.Linear(d_ff, d_attn))
        self.drop = nn.Dropout(dropout)

    def forward(self, x, valid):
        h, weights = self.attn(self.norm1(x), valid)
        x = x + self.drop(h)
        x = x + self.drop(self.ff(self.norm2(x)))
        return x, weights


class Aggregator(nn.Module):
    def __init__(self, config: AggregationConfig):
        super().__init__()
        self.config = config
        c = config
        self.reshape = nn.Linear(c.d_emb, c.d_attn)  # Conv1D(kernel_size=1)
        self.layers = nn.ModuleList(
            EncoderLayer(c.d_attn, c.heads, c.d_ff, c.dropout) for _ in range(c.n_layers))
        self.norm = nn.LayerNorm(c.d_attn)
        self.reduce = nn.Linear(2 * c.d_attn, c.d_attn)
        self.classifier = nn.Linear(c.d_attn, c.d_accent)

    def encode(self, a_m: torch.Tensor, lengths: Optional[torch.Tensor] = None):
        """Frame embeddings (B, T, d_emb) -> pooled utterance vector A_c and attention maps."""
        B, T, _ = a_m.shape
        if lengths is None:
            lengths = torch.full((B,), T, dtype=torch.long)
        valid = torch.arange(T)[None, :] < lengths[:, None]
        x = self.reshape(a_m)
        if self.config.positional_encoding:
            x = x + sinusoidal_encoding(T, self.config.d_attn, x.dtype)
        maps = []
        for layer in self.layers:
            x, w = layer(x, valid)
            maps.append(w)
        x = self.norm(x)
        return self.reduce(statistic_pool(x, lengths)), maps

    def forward(self, a_m: torch.Tensor, lengths: Optional[torch.Tensor] = None) -> AccentPrediction:
        pooled, maps = self.encode(a_m, lengths)
        logits = self.classifier(pooled)
        return AccentPrediction(logits, pooled, argmax_lowest(logits.detach()), maps)


def aggregate(a_m, model: Aggregator, lengths=None) -> AccentPrediction:
    return model(a_m, lengths)
