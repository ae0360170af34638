"""Training regimes, the combined MTL loss, ASR pretraining and evaluation."""
from __future__ import annotations

import copy
import csv
import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .acoustic import AcousticModel, greedy_ctc_decode, phone_error_rate
from .data import AESRC_ACCENTS, Corpus
from .errors import ConfigError, DivergenceError
from .features import FeatureSequence, SpecAugPolicy, spec_augment
from .fusion import FusionMode
from .losses import ce_loss, ctc_loss
from .model import AccentRecognizer

log = logging.getLogger(__name__)


class Regime(str, enum.Enum):
    AR_ONLY = "ar_only"
    ASR_INIT = "asr_init"
    MTL = "mtl"
    HYBRID = "hybrid"


@dataclass
class TrainConfig:
    regime: Regime = Regime.MTL
    lam: float = 0.1
    fusion_mode: Optional[FusionMode] = FusionMode.CONCAT_CA
    lr: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 20
    seed: int = 0
    spec_augment: Optional[SpecAugPolicy] = None
    patience: Optional[int] = None
    deterministic: bool = True
    select_best: bool = True  # restore the most accurate validation epoch after training

    def __post_init__(self):
        self.regime = Regime(self.regime)
        if self.fusion_mode is not None:
            self.fusion_mode = FusionMode(self.fusion_mode)
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("lr, batch_size and max_epochs must be positive")

    @property
    def asr_weight(self) -> float:
        """Effective lambda: the ASR term only contributes in the MTL and hybrid regimes."""
        return self.lam if self.regime in (Regime.MTL, Regime.HYBRID) else 0.0


@dataclass
class StepMetrics:
    step: int
    l_c: float
    l_asr: float
    l: float
    lr: float


@dataclass
class EvalReport:
    accuracy: float
    per_accent: dict[str, float]
    per: float
    loss: float
    n: int


@dataclass
class TrainMetrics:
    steps: list[StepMetrics] = field(default_factory=list)
    epochs: list[EvalReport] = field(default_factory=list)
    best_epoch: int = -1


# ---------------------------------------------------------------------------
# batching

@dataclass
class Batch:
    feats: torch.Tensor  # (B, T_in, d)
    lengths: torch.Tensor
    targets: list[list[int]]
    accents: torch.Tensor
    speakers: torch.Tensor
    utt_ids: list[str]


def collate(corpus: Corpus, indices: Sequence[int], augment: Optional[SpecAugPolicy] = None,
            rng: Optional[np.random.Generator] = None) -> Batch:
    """Pad a set of utterances to the longest one in the batch."""
    recs = [corpus[i] for i in indices]
    mats = []
    for r in recs:
        x = corpus.features(r)
        if augment is not None:
            x = spec_augment(FeatureSequence(x, len(x), r.utt_id), augment, rng).values
        mats.append(x)
    T = max(len(m) for m in mats)
    d = mats[0].shape[1]
    feats = np.zeros((len(mats), T, d), dtype=np.float32)
    for b, m in enumerate(mats):
        feats[b, : len(m)] = m
    return Batch(torch.from_numpy(feats), torch.tensor([len(m) for m in mats]),
                 [list(r.targets) for r in recs], torch.tensor([r.accent for r in recs]),
                 torch.tensor([r.speaker for r in recs]), [r.utt_id for r in recs])


def iter_batches(corpus: Corpus, batch_size: int, rng: Optional[np.random.Generator] = None,
                 augment: Optional[SpecAugPolicy] = None):
    order = rng.permutation(len(corpus)) if rng is not None else np.arange(len(corpus))
    for start in range(0, len(order), batch_size):
        yield collate(corpus, order[start:start + batch_size].tolist(), augment, rng)


def model_dtype(model: torch.nn.Module):
    return next(model.parameters()).dtype


# ---------------------------------------------------------------------------
# steps

def compute_losses(model: AccentRecognizer, batch: Batch, config: TrainConfig):
    """Return (l_c, l_asr, l) tensors; l_asr keeps its graph only when it is weighted in."""
    out = model(batch.feats.to(model_dtype(model)), batch.lengths)
    l_c = ce_loss(out.accent.logits, batch.accents).mean()
    weight = config.asr_weight
    if weight > 0 or config.regime in (Regime.MTL, Regime.HYBRID):
        l_asr = ctc_loss(out.phoneme_logits, batch.targets, out.lengths).mean()
    else:
        with torch.no_grad():
            l_asr = ctc_loss(out.phoneme_logits, batch.targets, out.lengths).mean()
    # summed in float64 so the logged total equals l_c + lambda * l_asr to rounding
    l = l_c.double() + weight * l_asr.double()
    for name, value in (("accent CE", l_c), ("ASR CTC", l_asr)):
        if not torch.isfinite(value):
            raise DivergenceError(f"{name} loss is non-finite ({value.item()})")
    return l_c, l_asr, l


def train_step(batch: Batch, model: AccentRecognizer, optimizer: torch.optim.Optimizer,
               config: TrainConfig, step: int = 0) -> StepMetrics:
    """One optimizer step on all trainable parameters with l = l_c + lambda * l_asr."""
    model.train()
    optimizer.zero_grad(set_to_none=True)
    l_c, l_asr, l = compute_losses(model, batch, config)
    l.backward()
    optimizer.step()
    return StepMetrics(step, l_c.item(), l_asr.item(), l.item(), optimizer.param_groups[0]["lr"])


@torch.no_grad()
def evaluate(model: AccentRecognizer, corpus: Corpus, batch_size: int = 32) -> EvalReport:
    """Validation accent accuracy (overall and per accent), PER and mean CE."""
    if len(corpus) == 0:
        raise ConfigError("cannot evaluate on an empty corpus")
    model.eval()
    correct = np.zeros(corpus.n_accents)
    total = np.zeros(corpus.n_accents)
    errors = ref_len = 0
    loss_sum = 0.0
    for batch in iter_batches(corpus, batch_size):
        out = model(batch.feats.to(model_dtype(model)), batch.lengths)
        loss_sum += ce_loss(out.accent.logits, batch.accents).sum().item()
        for b in range(len(batch.utt_ids)):
            a = int(batch.accents[b])
            total[a] += 1
            correct[a] += int(out.accent.predicted[b]) == a
            n = int(out.lengths[b])
            hyp = greedy_ctc_decode(out.phoneme_logits[b, :n])
            ref = batch.targets[b]
            errors += phone_error_rate(ref, hyp) * len(ref)
            ref_len += len(ref)
    per_accent = {name: (correct[i] / total[i] if total[i] else float("nan"))
                  for i, name in enumerate(corpus.accents)}
    return EvalReport(float(correct.sum() / total.sum()), per_accent, errors / ref_len,
                      loss_sum / len(corpus), len(corpus))


def seed_everything(seed: int, deterministic: bool = True):
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def train(model: AccentRecognizer, train_corpus: Corpus, val_corpus: Optional[Corpus],
          config: TrainConfig, metrics_csv: Optional[Path] = None,
          report_csv: Optional[Path] = None) -> TrainMetrics:
    """Train for ``max_epochs``, validating once per epoch.

    With ``config.select_best`` the most accurate epoch is restored; otherwise
    the final weights are kept and ``best_epoch`` is the last one.
    """
    if config.regime is Regime.HYBRID and not model.config.hybrid:
        raise ConfigError("the hybrid regime needs a model with a frozen reference acoustic model")
    seed_everything(config.seed, config.deterministic)
    rng = np.random.default_rng(config.seed)
    optimizer = torch.optim.Adam(model.trainable_parameters(), lr=config.lr)
    metrics = TrainMetrics()
    writer = _MetricsWriter(metrics_csv)
    best_acc, best_state, step = -1.0, None, 0
    for epoch in range(config.max_epochs):
        for batch in iter_batches(train_corpus, config.batch_size, rng, config.spec_augment):
            m = train_step(batch, model, optimizer, config, step)
            metrics.steps.append(m)
            writer.write(m)
            step += 1
        if val_corpus is not None:
            report = evaluate(model, val_corpus)
            metrics.epochs.append(report)
            log.info("epoch %d: val accuracy %.4f PER %.4f", epoch, report.accuracy, report.per)
            if report.accuracy > best_acc:
                best_acc, metrics.best_epoch = report.accuracy, epoch
                best_state = copy.deepcopy(model.state_dict())
    writer.close()
    if not config.select_best and metrics.epochs:
        metrics.best_epoch = len(metrics.epochs) - 1
    elif best_state is not None:
        model.load_state_dict(best_state)
    if report_csv is not None and metrics.epochs:
        write_epoch_report(report_csv, metrics.epochs, val_corpus.accents)
    return metrics


# ---------------------------------------------------------------------------
# ASR pretraining

@dataclass
class PretrainResult:
    model: AcousticModel
    best_epoch: int
    best_per: float
    history: list[tuple[float, float]]  # (train CTC, val PER) per epoch
    stopped_early: bool = False


@torch.no_grad()
def acoustic_per(model: AcousticModel, corpus: Corpus, batch_size: int = 32) -> float:
    model.eval()
    errors = ref_len = 0
    for batch in iter_batches(corpus, batch_size):
        out = model(batch.feats.to(model_dtype(model)), batch.lengths)
        for b, ref in enumerate(batch.targets):
            hyp = greedy_ctc_decode(out.phoneme_logits[b, : int(out.lengths[b])])
            errors += phone_error_rate(ref, hyp) * len(ref)
            ref_len += len(ref)
    return errors / ref_len


def pretrain_asr(model: AcousticModel, train_corpus: Corpus, val_corpus: Optional[Corpus],
                 config: TrainConfig) -> PretrainResult:
    """CTC-train an acoustic model and keep the epoch with the lowest validation PER."""
    seed_everything(config.seed, config.deterministic)
    rng = np.random.default_rng(config.seed)
    val_corpus = val_corpus if val_corpus is not None else train_corpus
    optimizer = torch.optim.Adam([p for p in model.parameters() if p.requires_grad], lr=config.lr)
    best_per, best_epoch, best_state = math.inf, -1, None
    history, stale, stopped = [], 0, False
    dtype = model_dtype(model)
    for epoch in range(config.max_epochs):
        model.train()
        losses = []
        for batch in iter_batches(train_corpus, config.batch_size, rng, config.spec_augment):
            optimizer.zero_grad(set_to_none=True)
            out = model(batch.feats.to(dtype), batch.lengths)
            loss = ctc_loss(out.phoneme_logits, batch.targets, out.lengths).mean()
            if not torch.isfinite(loss):
                raise DivergenceError(f"ASR CTC loss is non-finite ({loss.item()})")
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        per = acoustic_per(model, val_corpus)
        history.append((float(np.mean(losses)), per))
        log.info("pretrain epoch %d: CTC %.4f val PER %.4f", epoch, history[-1][0], per)
        if per < best_per:
            best_per, best_epoch, stale = per, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                log.warning("no PER improvement for %d epochs; stopping at epoch %d", stale, epoch)
                stopped = True
                break
    model.load_state_dict(best_state)
    return PretrainResult(model, best_epoch, best_per, history, stopped)


# ---------------------------------------------------------------------------
# CSV outputs

class _MetricsWriter:
    FIELDS = ("step", "l_c", "l_asr", "l", "lr")

    def __init__(self, path: Optional[Path]):
        self.fh = None
        if path is not None:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            new = not path.exists()
            self.fh = path.open("a", newline="")
            self.writer = csv.writer(self.fh)
            if new:
                self.writer.writerow(self.FIELDS)

    def write(self, m: StepMetrics):
        if self.fh is not None:
            self.writer.writerow([m.step, repr(m.l_c), repr(m.l_asr), repr(m.l), repr(m.lr)])

    def close(self):
        if self.fh is not None:
            self.fh.close()


def accent_columns(accents: Sequence[str]) -> list[str]:
    """AESRC column order when the corpus uses those accent names, else corpus order."""
    if set(accents) <= set(AESRC_ACCENTS):
        return [a for a in AESRC_ACCENTS if a in accents]
    return list(accents)


def write_accuracy_table(path: Path, rows: list[tuple[str, EvalReport]], accents: Sequence[str],
                         label: str = "model") -> None:
    """Percent accuracies, one row per model/condition, accent columns then Total."""
    cols = accent_columns(accents)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([label] + cols + ["Total"])
        for name, r in rows:
            w.writerow([name] + [_pct(r.per_accent[c]) for c in cols] + [_pct(r.accuracy)])


def write_epoch_report(path: Path, epochs: list[EvalReport], accents: Sequence[str]) -> None:
    cols = accent_columns(accents)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch"] + cols + ["Total", "PER"])
        for i, r in enumerate(epochs):
            w.writerow([i] + [_pct(r.per_accent[c]) for c in cols] + [_pct(r.accuracy), f"{r.per:.4f}"])


def _pct(x: float) -> str:
    return "nan" if x != x else f"{100 * x:.1f}"
