"""Controlled transcript corruption: phoneme-to-group relabelling and random transcripts."""
from __future__ import annotations

import csv
import enum
import logging
import zlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .data import ARPABET, BLANK_ID, N_PHONEMES, VOCAB, Corpus, write_manifest
from .errors import ConfigError, HybridARError, ManifestParseError

log = logging.getLogger(__name__)

# Reference totals (%) of the robustness table, kept for documentation only.
REFERENCE_ROBUSTNESS_TOTALS = {
    ("theta=0", "mtl"): 79.9, ("theta=0", "hybrid"): 81.1,
    ("theta=0.5", "mtl"): 76.8, ("theta=0.5", "hybrid"): 79.3,
    ("theta=1", "mtl"): 74.7, ("theta=1", "hybrid"): 77.5,
    ("random", "mtl"): 51.5, ("random", "hybrid"): 64.8,
}


class PhonemeHierarchy:
    """One-level grouping of the 39 phonemes; group labels are new ids after the phonemes."""

    def __init__(self, group_of_symbol: dict[str, str], group_names: Sequence[str] | None = None):
        missing = [p for p in ARPABET if p not in group_of_symbol]
        if missing:
            raise ConfigError(f"hierarchy does not cover phonemes {missing}")
        extra = [p for p in group_of_symbol if p not in ARPABET]
        if extra:
            raise ConfigError(f"hierarchy lists unknown phonemes {extra}")
        if group_names is None:
            group_names = list(dict.fromkeys(group_of_symbol[p] for p in ARPABET))
        self.group_names = tuple(group_names)
        unused = set(self.group_names) - set(group_of_symbol.values())
        if unused:
            raise ConfigError(f"empty groups {sorted(unused)}")
        index = {g: i for i, g in enumerate(self.group_names)}
        self.group_of = {BLANK_ID: BLANK_ID}
        for p in ARPABET:
            self.group_of[VOCAB.id(p)] = N_PHONEMES + 1 + index[group_of_symbol[p]]

    @property
    def n_groups(self) -> int:
        return len(self.group_names)

    @property
    def n_labels(self) -> int:
        """Size of the grown label alphabet: blank + phonemes + groups."""
        return N_PHONEMES + 1 + self.n_groups

    def group_name(self, label: int) -> str:
        return self.group_names[label - N_PHONEMES - 1]

    @classmethod
    def load(cls, path: str | Path | None = None) -> "PhonemeHierarchy":
        """Read ``PHONEME<TAB>GROUP`` lines; defaults to the bundled table."""
        if path is None:
            text = resources.files("hybrid_ar.resources").joinpath("phoneme_groups.tsv").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        mapping, order = {}, []
        for line_no, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) != 2:
                raise ManifestParseError(path or "<bundled hierarchy>", line_no,
                                         "expected PHONEME<TAB>GROUP")
            mapping[parts[0]] = parts[1]
            if parts[1] not in order:
                order.append(parts[1])
        return cls(mapping, order)


class DegradationMode(str, enum.Enum):
    HIERARCHY = "hierarchy"
    RANDOM = "random"


@dataclass
class DegradationConfig:
    theta: float = 0.0
    mode: DegradationMode = DegradationMode.HIERARCHY
    seed: int = 0

    def __post_init__(self):
        self.mode = DegradationMode(self.mode)
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError(f"theta={self.theta} outside [0, 1]")


def _rng(config: DegradationConfig, key: str) -> np.random.Generator:
    return np.random.default_rng([config.seed, zlib.crc32(key.encode("utf-8"))])


def degrade_transcript(w: Sequence[int], hierarchy: PhonemeHierarchy, config: DegradationConfig,
                       key: str = "") -> list[int]:
    """Relabel a phoneme sequence.

    HIERARCHY: each token independently becomes its group label when its
    uniform draw falls below theta. The draws depend only on (seed, key), so
    the mapped positions at a smaller theta are a subset of those at a
    larger one. RANDOM: i.i.d. uniform phonemes of the same length.
    """
    rng = _rng(config, key)
    if config.mode is DegradationMode.RANDOM:
        return rng.integers(1, N_PHONEMES + 1, size=len(w)).tolist()
    draws = rng.random(len(w))
    return [hierarchy.group_of[p] if u < config.theta else int(p) for p, u in zip(w, draws)]


def degrade_corpus(corpus: Corpus, hierarchy: PhonemeHierarchy, config: DegradationConfig) -> Corpus:
    """Copy of the corpus whose CTC targets are degraded per utterance (keyed by utt_id)."""
    labels = {r.utt_id: degrade_transcript(r.transcript_phonemes, hierarchy, config, r.utt_id)
              for r in corpus}
    return corpus.with_labels(labels)


def write_degraded_manifest(corpus: Corpus, path, config: DegradationConfig) -> None:
    header = {"degradation": {"theta": config.theta, "mode": config.mode.value, "seed": config.seed}}
    write_manifest(corpus, path, header=header)


def condition_name(theta: float | None) -> str:
    return "random" if theta is None else f"theta={theta:g}"


# ---------------------------------------------------------------------------
# robustness suite

@dataclass
class RobustnessRow:
    condition: str
    regime: str
    accuracy: Optional[float] = None
    per_accent: Optional[dict] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def robustness_conditions(thetas: Sequence[float], include_random: bool = True,
                          seed: int = 0) -> list[DegradationConfig]:
    conds = [DegradationConfig(theta=float(t), seed=seed) for t in thetas]
    if include_random:
        conds.append(DegradationConfig(mode=DegradationMode.RANDOM, seed=seed))
    return conds


def run_robustness_suite(train_cell: Callable[[DegradationConfig, str], object],
                         thetas: Sequence[float] = (0.0, 0.5, 1.0), regimes: Sequence[str] = ("mtl", "hybrid"),
                         include_random: bool = True, seed: int = 0) -> list[RobustnessRow]:
    """Train and evaluate one model per (transcription condition, regime).

    ``train_cell(condition, regime)`` returns an evaluation report with
    ``accuracy`` and ``per_accent``. A cell that raises is kept in the table
    with its error message so the remaining cells still run.
    """
    rows = []
    for cond in robustness_conditions(thetas, include_random, seed):
        name = condition_name(None if cond.mode is DegradationMode.RANDOM else cond.theta)
        for regime in regimes:
            try:
                report = train_cell(cond, regime)
            except (HybridARError, RuntimeError, ValueError) as exc:
                log.error("robustness cell %s/%s failed: %s", name, regime, exc)
                rows.append(RobustnessRow(name, regime, error=f"{type(exc).__name__}: {exc}"))
                continue
            rows.append(RobustnessRow(name, regime, report.accuracy, dict(report.per_accent)))
    return rows


def write_robustness_table(path, rows: Sequence[RobustnessRow], accents: Sequence[str]) -> None:
    """Percent accuracies per accent plus Total; failed cells are marked FAILED."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["transcription", "regime"] + list(accents) + ["Total", "status"])
        for r in rows:
            if r.failed:
                w.writerow([r.condition, r.regime] + ["FAILED"] * (len(accents) + 1) + [r.error])
            else:
                w.writerow([r.condition, r.regime]
                           + [f"{100 * r.per_accent[a]:.1f}" for a in accents]
                           + [f"{100 * r.accuracy:.1f}", "ok"])
