"""Assembly of the full accent recognizer (acoustic model, optional fusion, aggregator)."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional

import torch
import torch.nn as nn

from .acoustic import (AcousticConfig, AcousticModel, freeze, load_checkpoint,
                       save_checkpoint)
from .aggregation import AccentPrediction, AggregationConfig, Aggregator
from .errors import CheckpointError, ConfigError
from .fusion import FusionBlock, FusionConfig, FusionMode


@dataclass
class ModelConfig:
    acoustic: AcousticConfig = field(default_factory=AcousticConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    fusion: Optional[FusionConfig] = None

    def __post_init__(self):
        if self.aggregation.d_emb != self.acoustic.d_emb:
            raise ConfigError("aggregation.d_emb must equal acoustic.d_emb")
        if self.fusion is not None and self.fusion.d_emb != self.acoustic.d_emb:
            raise ConfigError("fusion.d_emb must equal acoustic.d_emb")

    @property
    def hybrid(self) -> bool:
        return self.fusion is not None

    @classmethod
    def full(cls, fusion_mode=None, n_accents=8):
        fusion = FusionConfig(fusion_mode, 1024, 16) if fusion_mode else None
        return cls(AcousticConfig.full(), AggregationConfig.full(d_accent=n_accents), fusion)

    @classmethod
    def desk(cls, fusion_mode=None, n_accents=8):
        fusion = FusionConfig(fusion_mode, 256, 16) if fusion_mode else None
        return cls(AcousticConfig.desk(), AggregationConfig(d_accent=n_accents), fusion)

    @classmethod
    def small(cls, fusion_mode=None, n_accents=4):
        """Laptop-CPU sized model used for the synthetic trend experiments."""
        ac = AcousticConfig(n_blocks=2, subblocks_per_block=2, d_emb=64, prologue_channels=64,
                            prologue_kernel=11, block_channels=(64, 64), kernel_sizes=(11, 11),
                            dropout=0.1)
        ag = AggregationConfig(d_emb=64, d_attn=64, d_ff=128, heads=4, n_layers=2,
                               d_accent=n_accents, dropout=0.1)
        fusion = FusionConfig(fusion_mode, 64, 16) if fusion_mode else None
        return cls(ac, ag, fusion)

    def with_fusion(self, mode) -> "ModelConfig":
        cfg = copy.deepcopy(self)
        cfg.fusion = None if mode is None else FusionConfig(mode, self.acoustic.d_emb,
                                                            self.fusion.squeeze_ratio if self.fusion else 16)
        return cfg


@dataclass
class ActivationBundle:
    """Named intermediate activations, for probes and tests."""

    a_asr: torch.Tensor  # trainable embedding (B, T, d_emb)
    lengths: torch.Tensor
    a_asr_ref: Optional[torch.Tensor] = None  # reference embedding
    a_asr_merged: Optional[torch.Tensor] = None  # fusion output
    a_c: Optional[torch.Tensor] = None  # pooled utterance vector (B, d_attn)
    channel_attention: Optional[torch.Tensor] = None  # (B, 2*d_emb)


@dataclass
class ModelOutput:
    accent: AccentPrediction
    phoneme_logits: torch.Tensor  # (B, T, n_labels) from the trainable model's ASR head
    lengths: torch.Tensor
    activations: ActivationBundle


class AccentRecognizer(nn.Module):
    """Trainable acoustic model -> [fusion with frozen reference] -> aggregator.

    The ASR head on the trainable acoustic model only feeds the auxiliary
    CTC loss; accent prediction never depends on it.
    """

    def __init__(self, config: ModelConfig, reference: Optional[AcousticModel] = None):
        super().__init__()
        self.config = config
        self.am_t = AcousticModel(copy.deepcopy(config.acoustic))
        if config.hybrid:
            if reference is None:
                raise ConfigError("a hybrid model needs a frozen reference acoustic model")
            if reference.config.d_emb != config.acoustic.d_emb:
                raise ConfigError("reference acoustic model has a different d_emb")
            self.am_f = freeze(reference)
            self.fusion = FusionBlock(config.fusion)
        else:
            self.am_f = None
            self.fusion = None
        self.aggregator = Aggregator(config.aggregation)

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def forward(self, feats: torch.Tensor, lengths: Optional[torch.Tensor] = None) -> ModelOutput:
        out_t = self.am_t(feats, lengths)
        acts = ActivationBundle(out_t.embedding, out_t.lengths)
        merged = out_t.embedding
        if self.fusion is not None:
            with torch.no_grad():
                out_f = self.am_f(feats, lengths)
            fused = self.fusion(out_t.embedding, out_f.embedding, out_t.lengths)
            merged = fused.merged
            acts.a_asr_ref = out_f.embedding
            acts.a_asr_merged = merged
            acts.channel_attention = fused.channel_attention
        pred = self.aggregator(merged, out_t.lengths)
        acts.a_c = pred.pooled
        return ModelOutput(pred, out_t.phoneme_logits, out_t.lengths, acts)


def build_model(config: ModelConfig, reference: Optional[AcousticModel] = None,
                init_acoustic: Optional[AcousticModel] = None, seed: Optional[int] = None):
    """Construct a recognizer, optionally seeding init and copying a pretrained acoustic model."""
    if seed is not None:
        torch.manual_seed(seed)
    model = AccentRecognizer(config, reference)
    if init_acoustic is not None:
        model.am_t.load_state_dict(init_acoustic.state_dict())
    return model


def save_model(path, model: AccentRecognizer, extra: dict | None = None):
    c = model.config
    configs = {"acoustic": model.am_t.config, "aggregation": c.aggregation}
    if c.fusion is not None:
        configs["fusion"] = {"mode": c.fusion.mode.value, "d_emb": c.fusion.d_emb,
                             "squeeze_ratio": c.fusion.squeeze_ratio}
        configs["reference"] = model.am_f.config
    save_checkpoint(path, "recognizer", configs, model.state_dict(), extra)


def load_model(path) -> AccentRecognizer:
    payload = load_checkpoint(path, "recognizer")
    cfgs = payload["configs"]
    acoustic = AcousticConfig(**cfgs["acoustic"])
    aggregation = AggregationConfig(**cfgs["aggregation"])
    fusion = FusionConfig(**cfgs["fusion"]) if "fusion" in cfgs else None
    reference = AcousticModel(AcousticConfig(**cfgs["reference"])) if fusion else None
    base = copy.deepcopy(acoustic)
    base.n_labels = 40
    model = AccentRecognizer(ModelConfig(base, aggregation, fusion), reference)
    if acoustic.n_labels != 40:
        model.am_t.reset_head(acoustic.n_labels)
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    model.extra = payload.get("extra", {})
    return model
