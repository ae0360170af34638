"""Jasper-style 1-D convolutional acoustic model, greedy CTC decoding and PER."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .data import BLANK_ID
from .errors import CheckpointError, ConfigError, ContractError, EmptyInputError, NumericError

D_PHONEME = 40


@dataclass
class AcousticConfig:
    n_blocks: int = 2
    subblocks_per_block: int = 2
    d_emb: int = 256
    d_in: int = 40
    prologue_channels: int = 256
    prologue_kernel: int = 11
    block_channels: tuple[int, ...] = (256, 256)
    kernel_sizes: tuple[int, ...] = (11, 13)
    dropout: float = 0.1
    downsample_factor: int = 2
    n_labels: int = D_PHONEME

    def __post_init__(self):
        self.block_channels = tuple(self.block_channels)
        self.kernel_sizes = tuple(self.kernel_sizes)
        self.validate()

    def validate(self):
        if self.downsample_factor != 2:
            raise ConfigError("the acoustic model downsamples time by exactly 2")
        if self.d_emb <= 0 or self.n_blocks <= 0 or self.subblocks_per_block <= 0:
            raise ConfigError("d_emb, n_blocks and subblocks_per_block must be positive")
        if len(self.block_channels) != self.n_blocks or len(self.kernel_sizes) != self.n_blocks:
            raise ConfigError("need one channel width and one kernel size per block")
        if any(k % 2 == 0 for k in self.kernel_sizes + (self.prologue_kernel,)):
            raise ConfigError("kernel sizes must be odd to keep lengths aligned")

    @classmethod
    def full(cls, **overrides):
        """Jasper 5x3 with a 1024-dim embedding."""
        kw = dict(n_blocks=5, subblocks_per_block=3, d_emb=1024, prologue_channels=256,
                  block_channels=(256, 384, 512, 640, 768), kernel_sizes=(11, 13, 17, 21, 25),
                  dropout=0.2)
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def desk(cls, **overrides):
        return cls(**overrides)

    @classmethod
    def tiny(cls, **overrides):
        kw = dict(n_blocks=2, subblocks_per_block=2, d_emb=8, prologue_channels=6,
                  prologue_kernel=3, block_channels=(6, 5), kernel_sizes=(3, 3), dropout=0.0)
        kw.update(overrides)
        return cls(**kw)


def output_lengths(lengths):
    """Frames after the stride-2 prologue: ceil(T_in / 2)."""
    return (lengths + 1) // 2


def length_mask(lengths: torch.Tensor, max_len: int) -> torch.Tensor:
    """Boolean (B, T) mask, True on valid frames."""
    return torch.arange(max_len, device=lengths.device)[None, :] < lengths[:, None]


class SubBlock(nn.Module):
    """Conv1d -> BatchNorm -> (residual add) -> ReLU -> dropout."""

    def __init__(self, c_in, c_out, kernel, dropout, stride=1):
        super().__init__()
        self.conv = nn.Conv1d(c_in, c_out, kernel, stride=stride, padding=kernel // 2, bias=False)
        self.bn = nn.BatchNorm1d(c_out)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, residual=None):
        y = self.bn(self.conv(x))
        if residual is not None:
            y = y + residual
        return self.drop(torch.relu(y))


class JasperBlock(nn.Module):
    def __init__(self, c_in, c_out, kernel, n_sub, dropout):
        super().__init__()
        self.subs = nn.ModuleList(
            SubBlock(c_in if i == 0 else c_out, c_out, kernel, dropout) for i in range(n_sub))
        self.res_conv = nn.Conv1d(c_in, c_out, 1, bias=False)
        self.res_bn = nn.BatchNorm1d(c_out)

    def forward(self, x, mask):
        residual = self.res_bn(self.res_conv(x))
        for i, sub in enumerate(self.subs):
            last = i == len(self.subs) - 1
            x = sub(x, residual if last else None) * mask
        return x


@dataclass
class AcousticOutput:
    embedding: torch.Tensor  # (B, T, d_emb)
    phoneme_logits: torch.Tensor  # (B, T, n_labels)
    lengths: torch.Tensor  # (B,)


class AcousticModel(nn.Module):
    """Prologue (stride 2) -> Jasper blocks -> 1x1 epilogue -> linear phoneme head."""

    def __init__(self, config: AcousticConfig):
        super().__init__()
        self.config = config
        c = config
        self.prologue = SubBlock(c.d_in, c.prologue_channels, c.prologue_kernel, c.dropout, stride=2)
        blocks, c_in = [], c.prologue_channels
        for ch, k in zip(c.block_channels, c.kernel_sizes):
            blocks.append(JasperBlock(c_in, ch, k, c.subblocks_per_block, c.dropout))
            c_in = ch
        self.blocks = nn.ModuleList(blocks)
        self.epilogue = SubBlock(c_in, c.d_emb, 1, c.dropout)
        self.head = nn.Linear(c.d_emb, c.n_labels)

    frozen = False

    def train(self, mode: bool = True):
        # a frozen model always uses BN running statistics
        return super().train(mode and not self.frozen)

    def reset_head(self, n_labels: int, keep_existing: bool = True):
        """Swap in a new phoneme head, e.g. for the grown label set of degraded transcripts.

        With ``keep_existing`` the rows of labels present in both heads are copied over.
        """
        old = self.head
        self.config.n_labels = n_labels
        self.head = nn.Linear(self.config.d_emb, n_labels).to(old.weight)
        if keep_existing:
            n = min(n_labels, old.out_features)
            with torch.no_grad():
                self.head.weight[:n] = old.weight[:n]
                self.head.bias[:n] = old.bias[:n]

    def forward(self, feats: torch.Tensor, lengths: Optional[torch.Tensor] = None,
                check_finite: bool = True) -> AcousticOutput:
        """``feats`` is (B, T_in, d_in); padded frames beyond ``lengths`` are ignored."""
        if feats.dim() != 3 or feats.shape[-1] != self.config.d_in:
            raise ContractError(f"expected (B, T_in, {self.config.d_in}) features, got {tuple(feats.shape)}")
        B, T_in, _ = feats.shape
        if T_in == 0:
            raise EmptyInputError("acoustic model received an empty feature sequence")
        if lengths is None:
            lengths = torch.full((B,), T_in, dtype=torch.long)
        if (lengths < 1).any():
            raise EmptyInputError("every utterance needs at least one frame")
        in_mask = length_mask(lengths, T_in).unsqueeze(1).to(feats.dtype)
        x = feats.transpose(1, 2) * in_mask
        out_len = output_lengths(lengths)
        T = output_lengths(T_in)
        mask = length_mask(out_len, T).unsqueeze(1).to(feats.dtype)

        x = self.prologue(x) * mask
        self._check(x, 0, check_finite)
        for i, block in enumerate(self.blocks, 1):
            x = block(x, mask)
            self._check(x, i, check_finite)
        x = self.epilogue(x) * mask
        self._check(x, len(self.blocks) + 1, check_finite)
        emb = x.transpose(1, 2)
        return AcousticOutput(emb, self.head(emb), out_len)

    @staticmethod
    def _check(x, layer, enabled):
        if enabled and not torch.isfinite(x).all():
            raise NumericError(f"non-finite activation after acoustic layer {layer}")


def acoustic_forward(x, model: AcousticModel) -> AcousticOutput:
    """Run one :class:`~hybrid_ar.features.FeatureSequence` (batch of one)."""
    values = torch.as_tensor(np.asarray(x.values), dtype=next(model.parameters()).dtype)
    if values.shape[0] == 0:
        raise EmptyInputError("empty feature sequence")
    out = model(values.unsqueeze(0), torch.tensor([x.valid_length]))
    n = int(out.lengths[0])
    return AcousticOutput(out.embedding[0, :n], out.phoneme_logits[0, :n], out.lengths[0])


def freeze(model: "AcousticModel") -> "AcousticModel":
    """Disable gradients and pin the model to eval mode for good."""
    for p in model.parameters():
        p.requires_grad_(False)
    model.frozen = True
    return model.eval()


# ---------------------------------------------------------------------------
# decoding and scoring

def greedy_ctc_decode(logits, blank: int = BLANK_ID) -> list[int]:
    """Best-path decoding: frame argmax (lowest index on ties), collapse repeats, drop blanks."""
    if isinstance(logits, torch.Tensor):
        logits = logits.detach().cpu().numpy()
    logits = np.asarray(logits)
    if logits.size == 0:
        return []
    best = np.argmax(logits, axis=-1)
    out, prev = [], None
    for k in best.tolist():
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def phone_error_rate(ref: Sequence[int], hyp: Sequence[int]) -> float:
    if len(ref) == 0:
        raise ContractError("phone error rate is undefined for an empty reference")
    return edit_distance(ref, hyp) / len(ref)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path, kind: str, configs: dict, state_dict: dict, extra: dict | None = None):
    """Versioned container of named tensors plus an echo of the configs that built them."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": "hybrid_ar",
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "configs": {k: _config_dict(v) for k, v in configs.items()},
        "state_dict": {k: v.detach().cpu().clone() for k, v in state_dict.items()},
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path, kind: str | None = None, expect_configs: dict | None = None) -> dict:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != "hybrid_ar":
        raise CheckpointError(f"{path}: not a hybrid_ar checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    if kind is not None and payload["kind"] != kind:
        raise CheckpointError(f"{path}: expected a {kind!r} checkpoint, got {payload['kind']!r}")
    for name, cfg in (expect_configs or {}).items():
        stored = payload["configs"].get(name)
        if stored != _config_dict(cfg):
            raise CheckpointError(f"{path}: {name} config mismatch: stored {stored}, requested {_config_dict(cfg)}")
    return payload


def _config_dict(cfg):
    d = asdict(cfg) if hasattr(cfg, "__dataclass_fields__") else dict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def save_acoustic(path, model: AcousticModel, extra: dict | None = None):
    save_checkpoint(path, "acoustic", {"acoustic": model.config}, model.state_dict(), extra)


def load_acoustic(path, config: AcousticConfig | None = None) -> AcousticModel:
    payload = load_checkpoint(path, "acoustic", {"acoustic": config} if config else None)
    stored = dict(payload["configs"]["acoustic"])
    model = AcousticModel(AcousticConfig(**stored))
    model.load_state_dict(payload["state_dict"])
    return model
