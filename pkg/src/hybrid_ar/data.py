"""Corpus ingestion, grapheme-to-phoneme conversion and the synthetic accented corpus.

Phoneme ids follow the CTC convention used throughout the package: 0 is the
blank symbol and 1..39 are the ARPAbet phonemes in alphabetical order.
"""
from __future__ import annotations

import json
import re
import zlib
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .errors import (ConfigError, ConsistencyError, ManifestParseError,
                     PronunciationLookupError, SplitError)

BLANK = "<BLANK>"
BLANK_ID = 0

ARPABET = (
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH",
    "EH", "ER", "EY", "F", "G", "HH", "IH", "IY", "JH", "K",
    "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH",
    "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
)

# AESRC accent order, used for report columns when the corpus uses these names.
AESRC_ACCENTS = ("US", "UK", "CN", "IN", "JP", "KR", "PT", "RU")


class PhonemeVocabulary:
    """Bijective map between the 40 CTC symbols and their integer ids."""

    def __init__(self, symbols: Sequence[str] = (BLANK,) + ARPABET):
        symbols = tuple(symbols)
        if len(symbols) != 40 or len(set(symbols)) != len(symbols):
            raise ConfigError("phoneme vocabulary must hold 40 distinct symbols")
        if symbols[0] != BLANK:
            raise ConfigError("index 0 must be the blank symbol")
        self.symbols = symbols
        self._index = {s: i for i, s in enumerate(symbols)}

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, symbol):
        return symbol in self._index

    def id(self, symbol: str) -> int:
        return self._index[symbol]

    def ids(self, symbols: Iterable[str]) -> list[int]:
        return [self._index[s] for s in symbols]

    def symbol(self, idx: int) -> str:
        return self.symbols[idx]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.symbols[i] for i in ids]


VOCAB = PhonemeVocabulary()
N_PHONEMES = len(ARPABET)


@dataclass
class UtteranceRecord:
    utt_id: str
    features_path: str
    transcript_words: list[str]
    transcript_phonemes: list[int]
    accent: int
    speaker: int
    # CTC targets when they differ from the canonical phonemes (degraded transcripts).
    labels: Optional[list[int]] = None

    @property
    def targets(self) -> list[int]:
        return self.labels if self.labels is not None else self.transcript_phonemes


class Corpus:
    """Records plus the frozen accent/speaker vocabularies and a feature store.

    Features are either held in memory (synthetic corpora) or read lazily from
    the container files referenced by ``features_path`` relative to ``root``.
    """

    def __init__(self, records, accents, speakers, features=None, root=None):
        self.records: list[UtteranceRecord] = list(records)
        self.accents: tuple[str, ...] = tuple(accents)
        self.speakers: tuple[str, ...] = tuple(speakers)
        self.root = Path(root) if root is not None else None
        self._features: dict[str, np.ndarray] = dict(features or {})
        self.speaker_accent = _speaker_accent_map(self.records)

    def __len__(self):
        return len(self.records)

    def __iter__(self) -> Iterator[UtteranceRecord]:
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def n_accents(self):
        return len(self.accents)

    @property
    def n_speakers(self):
        return len(self.speakers)

    def features(self, record: UtteranceRecord | str) -> np.ndarray:
        utt_id = record if isinstance(record, str) else record.utt_id
        if utt_id not in self._features:
            from .features import read_feature_file

            if isinstance(record, str):
                record = next(r for r in self.records if r.utt_id == utt_id)
            path = Path(record.features_path)
            if not path.is_absolute() and self.root is not None:
                path = self.root / path
            self._features[utt_id] = read_feature_file(path).values
        return self._features[utt_id]

    def subset(self, indices: Iterable[int]) -> "Corpus":
        recs = [self.records[i] for i in indices]
        feats = {r.utt_id: self._features[r.utt_id] for r in recs if r.utt_id in self._features}
        return Corpus(recs, self.accents, self.speakers, feats, self.root)

    def with_labels(self, labels: dict[str, list[int]]) -> "Corpus":
        """Copy of the corpus whose CTC targets are replaced per utterance."""
        recs = [
            UtteranceRecord(r.utt_id, r.features_path, list(r.transcript_words),
                            list(r.transcript_phonemes), r.accent, r.speaker,
                            list(labels[r.utt_id]))
            for r in self.records
        ]
        return Corpus(recs, self.accents, self.speakers, self._features, self.root)


def _speaker_accent_map(records: Iterable[UtteranceRecord]) -> dict[int, int]:
    mapping: dict[int, int] = {}
    for r in records:
        prev = mapping.setdefault(r.speaker, r.accent)
        if prev != r.accent:
            raise ConsistencyError(
                f"speaker {r.speaker} labelled with accents {prev} and {r.accent}")
    return mapping


# ---------------------------------------------------------------------------
# lexicon and G2P

_STRESS = re.compile(r"\d")

# Per-letter fallback for out-of-vocabulary words.
LETTER_TO_PHONEMES = {
    "A": ["AE"], "B": ["B"], "C": ["K"], "D": ["D"], "E": ["EH"], "F": ["F"],
    "G": ["G"], "H": ["HH"], "I": ["IH"], "J": ["JH"], "K": ["K"], "L": ["L"],
    "M": ["M"], "N": ["N"], "O": ["AA"], "P": ["P"], "Q": ["K"], "R": ["R"],
    "S": ["S"], "T": ["T"], "U": ["AH"], "V": ["V"], "W": ["W"], "X": ["K", "S"],
    "Y": ["Y"], "Z": ["Z"],
}


def load_lexicon(path: str | Path | None = None) -> dict[str, list[int]]:
    """Read a ``WORD<TAB>PH PH ...`` lexicon, stripping stress digits.

    With no path the small lexicon bundled with the package is used. Only the
    first pronunciation of a word is kept.
    """
    if path is None:
        text = resources.files("hybrid_ar.resources").joinpath("lexicon.tsv").read_text("utf-8")
        source = "<bundled lexicon>"
    else:
        text = Path(path).read_text("utf-8")
        source = str(path)
    lexicon: dict[str, list[int]] = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith(("#", ";;;")):
            continue
        parts = line.split("\t") if "\t" in line else line.split(None, 1)
        if len(parts) != 2:
            raise ManifestParseError(source, line_no, "expected WORD<TAB>PHONEMES")
        word = re.sub(r"\(\d+\)$", "", parts[0].strip().upper())
        phones = [_STRESS.sub("", p) for p in parts[1].split()]
        unknown = [p for p in phones if p not in VOCAB or p == BLANK]
        if unknown:
            raise ManifestParseError(source, line_no, f"unknown phonemes {unknown}")
        lexicon.setdefault(word, VOCAB.ids(phones))
    return lexicon


def g2p(words: Sequence[str], lexicon: dict[str, list[int]], strict: bool = False) -> list[int]:
    """Concatenate per-word pronunciations.

    Unknown words fall back to a letter-by-letter mapping unless ``strict``.
    """
    out: list[int] = []
    for word in words:
        key = word.upper()
        if key in lexicon:
            out.extend(lexicon[key])
        elif strict:
            raise PronunciationLookupError(f"word not in lexicon: {word!r}")
        else:
            for ch in key:
                out.extend(VOCAB.ids(LETTER_TO_PHONEMES.get(ch, [])))
    return out


# ---------------------------------------------------------------------------
# manifests

MANIFEST_FIELDS = ("utt_id", "features_path", "text", "accent", "speaker")


def load_manifest(path: str | Path, lexicon: dict[str, list[int]] | None = None,
                  strict: bool = False, accents: Sequence[str] | None = None) -> Corpus:
    """Parse a line-delimited JSON manifest into a :class:`Corpus`.

    Records keep file order. Lines starting with ``#`` are headers. An optional
    ``phonemes`` field (ARPAbet symbols) overrides G2P of ``text``; an optional
    ``labels`` field holds integer CTC targets. Pass ``accents`` to parse a
    split against an already frozen accent vocabulary.
    """
    path = Path(path)
    rows = []
    for line_no, line in enumerate(path.read_text("utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestParseError(path, line_no, f"invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ManifestParseError(path, line_no, "record must be an object")
        missing = [k for k in MANIFEST_FIELDS if k not in obj]
        if missing:
            raise ManifestParseError(path, line_no, f"missing fields {missing}")
        if not isinstance(obj["text"], str):
            raise ManifestParseError(path, line_no, "text must be a string")
        rows.append((line_no, obj))

    if accents is None:
        accents = sorted({str(o["accent"]) for _, o in rows})
    accent_index = {a: i for i, a in enumerate(accents)}
    speaker_index: dict[str, int] = OrderedDict()
    if lexicon is None and any("phonemes" not in o for _, o in rows):
        lexicon = load_lexicon()

    records = []
    first_accent: dict[str, tuple[str, int]] = {}
    for line_no, o in rows:
        accent, speaker = str(o["accent"]), str(o["speaker"])
        if accent not in accent_index:
            raise ManifestParseError(path, line_no, f"unknown accent {accent!r}")
        seen = first_accent.setdefault(speaker, (accent, line_no))
        if seen[0] != accent:
            raise ConsistencyError(
                f"{path}:{line_no}: speaker {speaker!r} has accent {accent!r} "
                f"but line {seen[1]} gave {seen[0]!r}")
        words = o["text"].split()
        try:
            if "phonemes" in o:
                phones = VOCAB.ids(_STRESS.sub("", p) for p in o["phonemes"])
            else:
                phones = g2p(words, lexicon, strict=strict)
        except (KeyError, PronunciationLookupError) as exc:
            raise ManifestParseError(path, line_no, f"transcript lookup failed: {exc}") from None
        if not phones or not all(1 <= p <= N_PHONEMES for p in phones):
            raise ManifestParseError(path, line_no, "empty or invalid phoneme transcript")
        labels = o.get("labels")
        if labels is not None and not all(isinstance(x, int) and x > 0 for x in labels):
            raise ManifestParseError(path, line_no, "labels must be positive integers")
        spk = speaker_index.setdefault(speaker, len(speaker_index))
        records.append(UtteranceRecord(str(o["utt_id"]), str(o["features_path"]), words,
                                       phones, accent_index[accent], spk, labels))
    return Corpus(records, accents, list(speaker_index), root=path.parent)


def write_manifest(corpus: Corpus, path: str | Path, header: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        if header is not None:
            fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        for r in corpus.records:
            obj = {
                "utt_id": r.utt_id,
                "features_path": r.features_path,
                "text": " ".join(r.transcript_words),
                "accent": corpus.accents[r.accent],
                "speaker": corpus.speakers[r.speaker],
                "phonemes": VOCAB.decode(r.transcript_phonemes),
            }
            if r.labels is not None:
                obj["labels"] = list(r.labels)
            fh.write(json.dumps(obj) + "\n")


# ---------------------------------------------------------------------------
# splits

def speaker_disjoint_split(corpus: Corpus, n_val_speakers_per_accent: int,
                           seed: int = 0) -> tuple[Corpus, Corpus]:
    """Hold out whole speakers, the same number from every accent."""
    rng = np.random.default_rng(seed)
    by_accent: dict[int, list[int]] = {}
    for spk, acc in sorted(corpus.speaker_accent.items()):
        by_accent.setdefault(acc, []).append(spk)
    val_speakers = set()
    for acc, spks in sorted(by_accent.items()):
        if len(spks) <= n_val_speakers_per_accent:
            raise SplitError(f"accent {acc} has only {len(spks)} speakers")
        chosen = rng.choice(len(spks), size=n_val_speakers_per_accent, replace=False)
        val_speakers.update(spks[i] for i in sorted(chosen))
    train = [i for i, r in enumerate(corpus) if r.speaker not in val_speakers]
    val = [i for i, r in enumerate(corpus) if r.speaker in val_speakers]
    return corpus.subset(train), corpus.subset(val)


def utterance_split(corpus: Corpus, val_fraction: float = 0.2,
                    seed: int = 0) -> tuple[Corpus, Corpus]:
    """Split by utterance, stratified per speaker, so every speaker lands in both halves."""
    rng = np.random.default_rng(seed)
    by_speaker: dict[int, list[int]] = {}
    for i, r in enumerate(corpus):
        by_speaker.setdefault(r.speaker, []).append(i)
    train, val = [], []
    for spk, idx in sorted(by_speaker.items()):
        if len(idx) < 2:
            raise SplitError(f"speaker {corpus.speakers[spk]} has fewer than 2 utterances")
        n_val = min(max(1, int(round(val_fraction * len(idx)))), len(idx) - 1)
        perm = rng.permutation(len(idx))
        val.extend(idx[j] for j in perm[:n_val])
        train.extend(idx[j] for j in perm[n_val:])
    return corpus.subset(sorted(train)), corpus.subset(sorted(val))


def check_probe_split(train: Corpus, val: Corpus) -> None:
    a = {r.speaker for r in train}
    b = {r.speaker for r in val}
    if a != b:
        missing = sorted(a ^ b)
        raise SplitError(f"speakers missing from one probe split: {missing}")


# ---------------------------------------------------------------------------
# synthetic accented corpus

@dataclass
class SyntheticCorpusSpec:
    """Knobs of the desk-scale synthetic corpus.

    ``accent_shift_table[a]`` maps a canonical phoneme id to
    ``(substitute_id, probability)`` for accent ``a``; when omitted a table is
    drawn from the world seed. ``speaker_timbre`` defaults to Gaussian bias
    vectors with standard deviation ``timbre_scale``.

    ``world_seed`` (default: ``seed``) fixes the phoneme prototypes and the
    default accent table, so corpora sampled with different ``seed`` values
    can share one "language".
    """

    n_accents: int = 4
    n_speakers_per_accent: int = 8
    n_utts_per_speaker: int = 50
    accent_shift_table: Optional[list[dict[int, tuple[int, float]]]] = None
    speaker_timbre: Optional[np.ndarray] = None
    seed: int = 0
    d_fbank: int = 40
    substitutions_per_accent: int = 4
    substitution_prob: float = 0.8
    timbre_scale: float = 1.0
    frame_noise: float = 0.3
    words_per_utt: tuple[int, int] = (3, 5)
    frames_per_phoneme: tuple[int, int] = (3, 8)
    speaker_prefix: str = ""
    world_seed: Optional[int] = None

    @property
    def resolved_world_seed(self) -> int:
        return self.seed if self.world_seed is None else self.world_seed

    def validate(self) -> None:
        if self.n_accents < 1 or self.n_speakers_per_accent < 1 or self.n_utts_per_speaker < 1:
            raise ConfigError("corpus sizes must be positive")
        if self.accent_shift_table is not None:
            if len(self.accent_shift_table) != self.n_accents:
                raise ConfigError("accent_shift_table needs one entry per accent")
            for table in self.accent_shift_table:
                for src, (dst, p) in table.items():
                    if not (1 <= src <= N_PHONEMES and 1 <= dst <= N_PHONEMES):
                        raise ConfigError(f"invalid substitution {src}->{dst}")
                    if not 0.0 <= p <= 1.0:
                        raise ConfigError(f"substitution probability {p} outside [0, 1]")
        if self.speaker_timbre is not None:
            shape = (self.n_accents * self.n_speakers_per_accent, self.d_fbank)
            if np.shape(self.speaker_timbre) != shape:
                raise ConfigError(f"speaker_timbre must have shape {shape}")
        lo, hi = self.frames_per_phoneme
        if not 1 <= lo <= hi:
            raise ConfigError("frames_per_phoneme must satisfy 1 <= lo <= hi")
        if not 1 <= self.words_per_utt[0] <= self.words_per_utt[1]:
            raise ConfigError("words_per_utt must satisfy 1 <= lo <= hi")


def phoneme_prototypes(seed: int, d_fbank: int = 40) -> np.ndarray:
    """One fixed feature vector per phoneme id (row 0, blank, is zero)."""
    rng = np.random.default_rng([seed, 0x70])
    protos = np.zeros((N_PHONEMES + 1, d_fbank))
    protos[1:] = rng.standard_normal((N_PHONEMES, d_fbank))
    return protos


def default_accent_shift_table(n_accents: int, n_subs: int, prob: float, seed: int,
                               lexicon: dict[str, list[int]]) -> list[dict[int, tuple[int, float]]]:
    """Disjoint per-accent substitutions from frequent onto less frequent phonemes."""
    rng = np.random.default_rng([seed, 0x5B])
    freq = Counter(p for pron in lexicon.values() for p in pron)
    ranked = sorted(range(1, N_PHONEMES + 1), key=lambda p: (-freq[p], p))
    if 2 * n_accents * n_subs > N_PHONEMES:
        raise ConfigError("too many substitutions for 39 phonemes")
    n_src = n_accents * n_subs
    sources = list(rng.permutation(ranked[:n_src]))
    targets = list(rng.permutation(ranked[n_src:])[:n_src])
    tables = []
    for a in range(n_accents):
        chunk = slice(a * n_subs, (a + 1) * n_subs)
        tables.append({int(s): (int(d), float(prob))
                       for s, d in zip(sources[chunk], targets[chunk])})
    return tables


def generate_synthetic_corpus(spec: SyntheticCorpusSpec,
                              lexicon: dict[str, list[int]] | None = None) -> Corpus:
    """Build an in-memory corpus of prototype-based accented utterances.

    Accent substitutions alter the features only; the transcript stays
    canonical. Every frame also carries the speaker's timbre bias.
    """
    spec.validate()
    lexicon = lexicon if lexicon is not None else load_lexicon()
    rng = np.random.default_rng(spec.seed)
    world = spec.resolved_world_seed
    protos = phoneme_prototypes(world, spec.d_fbank)
    if spec.accent_shift_table is not None:
        table = spec.accent_shift_table
    else:
        table = default_accent_shift_table(spec.n_accents, spec.substitutions_per_accent,
                                           spec.substitution_prob, world, lexicon)
    n_spk = spec.n_accents * spec.n_speakers_per_accent
    if spec.speaker_timbre is not None:
        timbre = np.asarray(spec.speaker_timbre, dtype=np.float64)
    else:
        timbre = spec.timbre_scale * np.random.default_rng([spec.seed, 0x7B]).standard_normal(
            (n_spk, spec.d_fbank))

    words = sorted(lexicon)
    accents = [f"accent{a}" for a in range(spec.n_accents)]
    speakers, records, feats = [], [], {}
    lo, hi = spec.frames_per_phoneme
    for a in range(spec.n_accents):
        for k in range(spec.n_speakers_per_accent):
            spk = len(speakers)
            name = f"{spec.speaker_prefix}a{a}s{k}"
            speakers.append(name)
            for j in range(spec.n_utts_per_speaker):
                n_words = rng.integers(spec.words_per_utt[0], spec.words_per_utt[1] + 1)
                text = [words[i] for i in rng.integers(0, len(words), size=n_words)]
                canon = g2p(text, lexicon, strict=True)
                draws = rng.random(len(canon))
                spoken = []
                for ph, u in zip(canon, draws):
                    sub = table[a].get(ph)
                    spoken.append(sub[0] if sub is not None and u < sub[1] else ph)
                # durations depend on the prompt only, like speakers reading shared prompts
                dur_rng = np.random.default_rng([spec.seed, zlib.crc32(" ".join(text).encode())])
                reps = dur_rng.integers(lo, hi + 1, size=len(spoken))
                frames = np.repeat(np.asarray(spoken), reps)
                x = protos[frames] + timbre[spk]
                if spec.frame_noise:
                    x = x + spec.frame_noise * rng.standard_normal(x.shape)
                utt_id = f"{name}_u{j:03d}"
                feats[utt_id] = x.astype(np.float32)
                records.append(UtteranceRecord(utt_id, f"feats/{utt_id}.fbk", text, canon, a, spk))
    corpus = Corpus(records, accents, speakers, feats)
    corpus.accent_shift_table = table
    return corpus


def write_corpus(corpus: Corpus, out_dir: str | Path, manifest_name: str = "manifest.jsonl") -> Path:
    """Write features and a manifest so the corpus can be reloaded from disk."""
    from .features import FeatureSequence, write_feature_file

    out_dir = Path(out_dir)
    for r in corpus:
        x = corpus.features(r)
        write_feature_file(out_dir / r.features_path, FeatureSequence(x, len(x), r.utt_id))
    path = out_dir / manifest_name
    write_manifest(corpus, path)
    return path
