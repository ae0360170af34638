"""Fusion of the trainable and the frozen reference phonetic embeddings."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn

from .errors import ConfigError, ContractError


class FusionMode(str, enum.Enum):
    ADD = "add"
    CONCAT = "concat"
    CONCAT_CA = "concat_ca"


@dataclass
class FusionConfig:
    mode: FusionMode = FusionMode.CONCAT_CA
    d_emb: int = 256
    squeeze_ratio: int = 16

    def __post_init__(self):
        self.mode = FusionMode(self.mode)
        if self.squeeze_ratio < 1 or (2 * self.d_emb) % self.squeeze_ratio:
            raise ConfigError(
                f"squeeze ratio {self.squeeze_ratio} must divide 2*d_emb={2 * self.d_emb}")


@dataclass
class FusionOutput:
    merged: torch.Tensor  # (B, T, d_emb)
    channel_attention: Optional[torch.Tensor] = None  # (B, 2*d_emb), CONCAT_CA only


class FusionBlock(nn.Module):
    """Project both embeddings, then add, concatenate, or concatenate with channel attention.

    Concatenation puts the trainable embedding in channels ``[0, d_emb)`` and
    the reference embedding in ``[d_emb, 2*d_emb)``.
    """

    def __init__(self, config: FusionConfig):
        super().__init__()
        self.config = config
        d = config.d_emb
        self.proj_trainable = nn.Linear(d, d)
        self.proj_reference = nn.Linear(d, d)
        if config.mode is not FusionMode.ADD:
            # kernel-1 Conv1D over time == per-frame linear map 2*d_emb -> d_emb
            self.merge = nn.Linear(2 * d, d)
        if config.mode is FusionMode.CONCAT_CA:
            hidden = 2 * d // config.squeeze_ratio
            self.squeeze = nn.Linear(2 * d, hidden)
            self.excite = nn.Linear(hidden, 2 * d)
            for layer in (self.squeeze, self.excite):
                nn.init.uniform_(layer.weight, -1e-2, 1e-2)
                nn.init.zeros_(layer.bias)

    def forward(self, a_t: torch.Tensor, a_r: torch.Tensor,
                lengths: Optional[torch.Tensor] = None) -> FusionOutput:
        if a_t.shape != a_r.shape:
            raise ContractError(f"embedding shapes differ: {tuple(a_t.shape)} vs {tuple(a_r.shape)}")
        if a_t.shape[-1] != self.config.d_emb:
            raise ContractError(f"expected d_emb={self.config.d_emb}, got {a_t.shape[-1]}")
        a_t = self.proj_trainable(a_t)
        a_r = self.proj_reference(a_r)
        mode = self.config.mode
        if mode is FusionMode.ADD:
            return FusionOutput(a_t + a_r)
        cat = torch.cat([a_t, a_r], dim=-1)
        if mode is FusionMode.CONCAT:
            return FusionOutput(self.merge(cat))
        ca = self.channel_attention(cat, lengths)
        return FusionOutput(self.merge(cat * ca.unsqueeze(1)), ca)

    def channel_attention(self, cat: torch.Tensor, lengths: Optional[torch.Tensor] = None):
        """Squeeze-excite gate from time-max plus time-mean pooling over valid frames."""
        B, T, _ = cat.shape
        if lengths is None:
            lengths = torch.full((B,), T, dtype=torch.long)
        valid = (torch.arange(T)[None, :] < lengths[:, None]).unsqueeze(-1)
        t_max = cat.masked_fill(~valid, float("-inf")).amax(dim=1)
        t_mean = (cat * valid).sum(dim=1) / lengths[:, None].to(cat.dtype)
        c = t_max + t_mean
        c_squeeze = torch.relu(self.squeeze(c))
        c_excite = torch.relu(self.excite(c_squeeze))
        return torch.sigmoid(c_excite)


def fuse(a_t, a_r, block: FusionBlock, lengths=None) -> FusionOutput:
    return block(a_t, a_r, lengths)


def reference_attention_ratio(ca: torch.Tensor) -> float:
    """Summed reference-half attention divided by summed trainable-half attention."""
    ca = torch.as_tensor(ca).detach().to(torch.float64).reshape(-1)
    if ca.numel() % 2:
        raise ContractError("channel attention must have an even number of channels")
    d = ca.numel() // 2
    return float(ca[d:].sum() / ca[:d].sum())
