"""Analysis probes: speaker leakage, channel-attention ratio and embedding export."""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from .data import Corpus, check_probe_split, utterance_split
from .errors import ContractError
from .fusion import FusionMode, reference_attention_ratio
from .losses import ce_loss
from .model import AccentRecognizer
from .training import iter_batches, model_dtype

# Channel-attention ratios read off the trained full-scale models, documentation only.
REFERENCE_ATTENTION_RATIO = {"normal": 1.02, "random": 1.63}


def parameter_checksum(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


@torch.no_grad()
def pooled_embeddings(model: AccentRecognizer, corpus: Corpus, batch_size: int = 64):
    """A_c for every utterance in corpus order, eval mode. Returns (N, d_attn) float64."""
    model.eval()
    rows = []
    for batch in iter_batches(corpus, batch_size):
        out = model(batch.feats.to(model_dtype(model)), batch.lengths)
        rows.append(out.activations.a_c.double())
    return torch.cat(rows).numpy()


@dataclass
class ProbeResult:
    loss_curve: list[tuple[int, float]] = field(default_factory=list)  # (step, train CE)
    accuracy_curve: list[tuple[int, float]] = field(default_factory=list)  # (epoch, val acc)
    final_accuracy: float = 0.0
    n_speakers: int = 0


def speaker_probe(model: AccentRecognizer, corpus: Corpus, epochs: int = 20, lr: float = 1e-4,
                  batch_size: int = 16, val_fraction: float = 0.2, seed: int = 0) -> ProbeResult:
    """Train only a fresh linear speaker head on top of the frozen model's pooled vector.

    The corpus is split by utterance so every speaker appears on both sides.
    Because everything below the head is frozen and run in eval mode, the
    pooled vectors are computed once and reused.
    """
    train_c, val_c = utterance_split(corpus, val_fraction, seed)
    check_probe_split(train_c, val_c)
    speakers = sorted({r.speaker for r in corpus})
    remap = {s: i for i, s in enumerate(speakers)}
    x_tr = torch.from_numpy(pooled_embeddings(model, train_c))
    x_va = torch.from_numpy(pooled_embeddings(model, val_c))
    y_tr = torch.tensor([remap[r.speaker] for r in train_c])
    y_va = torch.tensor([remap[r.speaker] for r in val_c])

    gen = torch.Generator().manual_seed(seed)
    head = nn.Linear(x_tr.shape[1], len(speakers)).double()
    with torch.no_grad():
        bound = 1.0 / np.sqrt(x_tr.shape[1])
        head.weight.uniform_(-bound, bound, generator=gen)
        head.bias.uniform_(-bound, bound, generator=gen)
    opt = torch.optim.Adam(head.parameters(), lr=lr)
    result = ProbeResult(n_speakers=len(speakers))
    step = 0
    for epoch in range(epochs):
        order = torch.randperm(len(y_tr), generator=gen)
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            opt.zero_grad()
            loss = ce_loss(head(x_tr[idx]), y_tr[idx]).mean()
            loss.backward()
            opt.step()
            result.loss_curve.append((step, loss.item()))
            step += 1
        with torch.no_grad():
            acc = (head(x_va).argmax(-1) == y_va).double().mean().item()
        result.accuracy_curve.append((epoch, acc))
    result.final_accuracy = result.accuracy_curve[-1][1]
    return result


@dataclass
class AttentionReport:
    channel_attention: np.ndarray  # (2*d_emb,), averaged over utterances
    ratio: float


@torch.no_grad()
def attention_ratio(model: AccentRecognizer, corpus: Corpus, batch_size: int = 64) -> AttentionReport:
    """Average the channel attention over the corpus, then take reference/trainable sums."""
    if model.fusion is None or model.fusion.config.mode is not FusionMode.CONCAT_CA:
        raise ContractError("attention ratio needs a model with channel-attention fusion")
    if len(corpus) == 0:
        raise ContractError("attention ratio needs at least one utterance")
    model.eval()
    total = None
    for batch in iter_batches(corpus, batch_size):
        ca = model(batch.feats.to(model_dtype(model)), batch.lengths).activations.channel_attention
        s = ca.double().sum(0)
        total = s if total is None else total + s
    mean = total / len(corpus)
    return AttentionReport(mean.numpy(), reference_attention_ratio(mean))


def write_attention_report(path, report: AttentionReport) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = len(report.channel_attention)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"ca{i}" for i in range(n)] + ["rho"])
        w.writerow([repr(float(v)) for v in report.channel_attention] + [repr(report.ratio)])


@dataclass
class EmbeddingDump:
    utt_ids: list[str]
    accents: list[str]
    speakers: list[str]
    vectors: np.ndarray  # (N, d_attn)


def export_embeddings(model: AccentRecognizer, corpus: Corpus, path=None) -> EmbeddingDump:
    """Per-utterance A_c vectors with labels; written as CSV when ``path`` is given."""
    vecs = pooled_embeddings(model, corpus)
    dump = EmbeddingDump([r.utt_id for r in corpus], [corpus.accents[r.accent] for r in corpus],
                         [corpus.speakers[r.speaker] for r in corpus], vecs)
    if path is not None:
        write_embedding_dump(path, dump)
    return dump


def write_embedding_dump(path, dump: EmbeddingDump) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = dump.vectors.shape[1] if dump.vectors.ndim == 2 else 0
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["utt_id", "accent", "speaker"] + [f"e{i}" for i in range(d)])
        for u, a, s, v in zip(dump.utt_ids, dump.accents, dump.speakers, dump.vectors):
            w.writerow([u, a, s] + [repr(float(x)) for x in v])


def read_embedding_dump(path) -> EmbeddingDump:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    vecs = np.array([[float(x) for x in r[3:]] for r in body]) if body else np.zeros((0, len(rows[0]) - 3))
    return EmbeddingDump([r[0] for r in body], [r[1] for r in body], [r[2] for r in body], vecs)
