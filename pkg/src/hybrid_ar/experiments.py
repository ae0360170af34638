"""Desk-scale experiment protocol on the synthetic corpus.

One "world" per seed: an accented corpus with a speaker-disjoint split, a
native (unaccented) corpus for ASR pretraining, the frozen reference
acoustic model trained on the native corpus, and a trainable acoustic
model initialised from it and fine-tuned on the accented training split.
Regimes are then trained on top of that world.
"""
from __future__ import annotations

import copy
import logging
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import torch

from .acoustic import AcousticModel
from .data import Corpus, SyntheticCorpusSpec, generate_synthetic_corpus, speaker_disjoint_split
from .degradation import DegradationConfig, DegradationMode, PhonemeHierarchy, degrade_corpus
from .fusion import FusionMode
from .model import AccentRecognizer, ModelConfig, build_model
from .probes import attention_ratio, speaker_probe
from .training import EvalReport, Regime, TrainConfig, pretrain_asr, train

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    seed: int = 0
    # accented corpus
    n_accents: int = 4
    n_speakers_per_accent: int = 8
    n_utts_per_speaker: int = 50
    n_val_speakers_per_accent: int = 2
    timbre_scale: float = 0.3
    substitution_prob: float = 1.0
    substitutions_per_accent: int = 4
    # native pretraining corpus
    native_speakers: int = 32
    native_utts_per_speaker: int = 40
    native_val_speakers: int = 4
    # optimisation
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 8
    pretrain_epochs: int = 8
    finetune_epochs: int = 4
    lam: float = 0.1
    probe_epochs: int = 100
    probe_lr: float = 1e-4
    select_best: bool = False  # report and probe the final epoch

    def corpus_spec(self) -> SyntheticCorpusSpec:
        return SyntheticCorpusSpec(
            n_accents=self.n_accents, n_speakers_per_accent=self.n_speakers_per_accent,
            n_utts_per_speaker=self.n_utts_per_speaker, seed=self.seed,
            timbre_scale=self.timbre_scale, substitution_prob=self.substitution_prob,
            substitutions_per_accent=self.substitutions_per_accent)

    def native_spec(self) -> SyntheticCorpusSpec:
        # Same phoneme prototypes (world_seed), fresh speakers, no accent.
        return SyntheticCorpusSpec(
            n_accents=1, n_speakers_per_accent=self.native_speakers,
            n_utts_per_speaker=self.native_utts_per_speaker, seed=self.seed + 100,
            world_seed=self.seed, timbre_scale=self.timbre_scale, substitution_prob=0.0,
            substitutions_per_accent=self.substitutions_per_accent, speaker_prefix="n")

    def model_config(self, fusion_mode=None) -> ModelConfig:
        return ModelConfig.small(fusion_mode, n_accents=self.n_accents)

    def train_config(self, regime: Regime, fusion_mode=FusionMode.CONCAT_CA) -> TrainConfig:
        return TrainConfig(regime=regime, lam=self.lam, fusion_mode=fusion_mode, lr=self.lr,
                           batch_size=self.batch_size, max_epochs=self.epochs, seed=self.seed,
                           select_best=self.select_best)


@dataclass
class World:
    config: ExperimentConfig
    train: Corpus
    val: Corpus
    reference: AcousticModel  # native-pretrained, used frozen
    accented: AcousticModel  # reference fine-tuned on accented training data
    reference_per: float
    accented_per: float


def build_world(config: ExperimentConfig) -> World:
    corpus = generate_synthetic_corpus(config.corpus_spec())
    train_c, val_c = speaker_disjoint_split(corpus, config.n_val_speakers_per_accent, config.seed)
    native = generate_synthetic_corpus(config.native_spec())
    n_train, n_val = speaker_disjoint_split(native, config.native_val_speakers, config.seed)

    mc = config.model_config()
    pre = TrainConfig(lr=config.lr, batch_size=config.batch_size,
                      max_epochs=config.pretrain_epochs, seed=config.seed)
    torch.manual_seed(config.seed)
    ref = pretrain_asr(AcousticModel(copy.deepcopy(mc.acoustic)), n_train, n_val, pre)
    fine = copy.deepcopy(pre)
    fine.max_epochs = config.finetune_epochs
    acc = pretrain_asr(copy.deepcopy(ref.model), train_c, val_c, fine)
    log.info("world seed %d: reference PER %.3f, accented PER %.3f",
             config.seed, ref.best_per, acc.best_per)
    return World(config, train_c, val_c, ref.model, acc.model, ref.best_per, acc.best_per)


@dataclass
class RegimeResult:
    name: str
    model: AccentRecognizer
    best: EvalReport
    history: list[EvalReport]
    seconds: float


def random_transcripts(corpus: Corpus, seed: int) -> Corpus:
    return degrade_corpus(corpus, PhonemeHierarchy.load(),
                          DegradationConfig(mode=DegradationMode.RANDOM, seed=seed))


def run_regime(world: World, regime: Regime, fusion_mode=FusionMode.CONCAT_CA,
               condition: Optional[DegradationConfig] = None,
               hierarchy: Optional[PhonemeHierarchy] = None, name: str = "") -> RegimeResult:
    """Train one regime in ``world``.

    ``condition`` degrades the CTC targets of both splits. Under RANDOM
    transcripts the trainable acoustic model starts from scratch; otherwise
    MTL, ASR_INIT and HYBRID start from the accented acoustic model and
    AR_ONLY from scratch.
    """
    cfg = world.config
    t0 = time.perf_counter()
    train_c, val_c = world.train, world.val
    grow = None
    if condition is not None:
        hierarchy = hierarchy or PhonemeHierarchy.load()
        train_c = degrade_corpus(train_c, hierarchy, condition)
        val_c = degrade_corpus(val_c, hierarchy, condition)
        if condition.mode is DegradationMode.HIERARCHY:
            grow = hierarchy.n_labels
    random_mode = condition is not None and condition.mode is DegradationMode.RANDOM
    pretrained = regime is not Regime.AR_ONLY and not random_mode

    hybrid = regime is Regime.HYBRID
    mc = cfg.model_config(fusion_mode if hybrid else None)
    model = build_model(mc, reference=copy.deepcopy(world.reference) if hybrid else None,
                        init_acoustic=world.accented if pretrained else None, seed=cfg.seed)
    if grow is not None:
        model.am_t.reset_head(grow)
    metrics = train(model, train_c, val_c, cfg.train_config(regime, fusion_mode))
    best = metrics.epochs[metrics.best_epoch]
    label = name or regime.value
    log.info("%s seed %d: val accuracy %.3f (epoch %d)", label, cfg.seed, best.accuracy,
             metrics.best_epoch)
    return RegimeResult(label, model, best, metrics.epochs, time.perf_counter() - t0)


def robustness_cell(world: World):
    """Cell trainer for :func:`~hybrid_ar.degradation.run_robustness_suite` on ``world``."""
    hierarchy = PhonemeHierarchy.load()

    def cell(condition: DegradationConfig, regime: str) -> EvalReport:
        return run_regime(world, Regime(regime), condition=condition, hierarchy=hierarchy).best

    return cell


@dataclass
class SeedTrends:
    seed: int
    ar_only: float
    mtl: float
    probe_ar_only: float
    probe_mtl: float
    mtl_random: float
    hybrid_random: float
    rho_normal: float
    rho_random: float
    hybrid_normal: float
    seconds: float


@dataclass
class TrendReport:
    seeds: list[SeedTrends] = field(default_factory=list)

    def median(self, key: str) -> float:
        return statistics.median(getattr(s, key) for s in self.seeds)

    @property
    def trend_a(self) -> bool:
        return self.median("mtl") >= self.median("ar_only") + 0.05

    @property
    def trend_b(self) -> bool:
        return self.median("probe_ar_only") >= self.median("probe_mtl") + 0.10

    @property
    def trend_c(self) -> bool:
        return (self.median("hybrid_random") >= self.median("mtl_random")
                and self.median("rho_random") > self.median("rho_normal"))

    def rows(self) -> list[dict]:
        return [vars(s) for s in self.seeds]


def run_seed(config: ExperimentConfig) -> SeedTrends:
    t0 = time.perf_counter()
    world = build_world(config)
    ar = run_regime(world, Regime.AR_ONLY)
    mtl = run_regime(world, Regime.MTL)
    probe = lambda r: speaker_probe(r.model, world.train, epochs=config.probe_epochs,
                                    lr=config.probe_lr, seed=config.seed).final_accuracy
    p_ar, p_mtl = probe(ar), probe(mtl)
    hyb = run_regime(world, Regime.HYBRID)
    rand = DegradationConfig(mode=DegradationMode.RANDOM, seed=config.seed)
    mtl_r = run_regime(world, Regime.MTL, condition=rand, name="mtl/random")
    hyb_r = run_regime(world, Regime.HYBRID, condition=rand, name="hybrid/random")
    rho_n = attention_ratio(hyb.model, world.val).ratio
    rho_r = attention_ratio(hyb_r.model, random_transcripts(world.val, config.seed)).ratio
    return SeedTrends(config.seed, ar.best.accuracy, mtl.best.accuracy, p_ar, p_mtl,
                      mtl_r.best.accuracy, hyb_r.best.accuracy, rho_n, rho_r,
                      hyb.best.accuracy, time.perf_counter() - t0)


def run_trends(seeds: Sequence[int] = (0, 1, 2), base: Optional[ExperimentConfig] = None,
               on_seed: Optional[Callable[[SeedTrends], None]] = None) -> TrendReport:
    base = base or ExperimentConfig()
    report = TrendReport()
    for seed in seeds:
        cfg = copy.deepcopy(base)
        cfg.seed = seed
        result = run_seed(cfg)
        report.seeds.append(result)
        if on_seed is not None:
            on_seed(result)
    return report
