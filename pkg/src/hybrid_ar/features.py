"""Log-mel filterbank extraction, SpecAug masking and the feature container format."""
from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AudioFormatError, AudioTooShortError, ContractError

SAMPLE_RATE = 16000
FRAME_LENGTH = 400  # 25 ms
FRAME_SHIFT = 160  # 10 ms
N_FFT = 512
N_MELS = 40
LOW_FREQ = 20.0
HIGH_FREQ = 7600.0
LOG_FLOOR = 1e-10

_MAGIC = b"FBK1"


@dataclass
class FeatureSequence:
    values: np.ndarray  # (T_in, d_fbank)
    valid_length: int
    utt_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ContractError(f"features must be 2-D, got shape {self.values.shape}")
        if not 0 <= self.valid_length <= self.values.shape[0]:
            raise ContractError("valid_length exceeds the number of frames")
        if not np.isfinite(self.values).all():
            raise ContractError("features contain non-finite values")

    @property
    def shape(self):
        return self.values.shape


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels=N_MELS, low=LOW_FREQ, high=HIGH_FREQ):
    """Center frequency (Hz) of each triangular filter."""
    mels = np.linspace(hz_to_mel(low), hz_to_mel(high), n_mels + 2)
    return mel_to_hz(mels[1:-1])


def mel_filterbank(n_mels=N_MELS, n_fft=N_FFT, sample_rate=SAMPLE_RATE,
                   low=LOW_FREQ, high=HIGH_FREQ) -> np.ndarray:
    """Triangular filters, equally spaced on the HTK mel scale, shape (n_mels, n_fft//2+1)."""
    edges = np.linspace(hz_to_mel(low), hz_to_mel(high), n_mels + 2)
    bin_mels = hz_to_mel(np.arange(n_fft // 2 + 1) * sample_rate / n_fft)
    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (bin_mels - left) / (center - left)
    down = (right - bin_mels) / (right - center)
    return np.clip(np.minimum(up, down), 0.0, None)


def num_frames(n_samples: int) -> int:
    return 1 + (n_samples - FRAME_LENGTH) // FRAME_SHIFT


def extract_fbank(pcm, sample_rate: int = SAMPLE_RATE, utt_id: str = "",
                  normalize: bool = False) -> FeatureSequence:
    """40-dim log-mel energies, 25 ms Hamming windows every 10 ms.

    Deterministic: no dither. ``normalize`` applies per-utterance
    mean/variance normalization (off by default).
    """
    if sample_rate != SAMPLE_RATE:
        raise AudioFormatError(f"expected {SAMPLE_RATE} Hz audio, got {sample_rate} Hz")
    pcm = np.asarray(pcm)
    if pcm.ndim != 1:
        raise AudioFormatError("expected mono audio")
    if pcm.size < FRAME_LENGTH:
        raise AudioTooShortError(f"{pcm.size} samples is shorter than one {FRAME_LENGTH}-sample window")
    x = pcm.astype(np.float64)
    n = num_frames(x.size)
    idx = np.arange(FRAME_LENGTH)[None, :] + FRAME_SHIFT * np.arange(n)[:, None]
    frames = x[idx] * np.hamming(FRAME_LENGTH)
    power = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1)) ** 2
    energies = power @ mel_filterbank().T
    feats = np.log(np.maximum(energies, LOG_FLOOR))
    if normalize:
        feats = (feats - feats.mean(0)) / (feats.std(0) + 1e-5)
    return FeatureSequence(feats.astype(np.float32), n, utt_id)


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read 16-bit mono PCM WAV; returns (int16 samples, sample rate)."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise AudioFormatError(f"{path}: only 16-bit mono PCM is supported")
        rate = w.getframerate()
        data = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
    return data, rate


@dataclass
class SpecAugPolicy:
    n_freq_masks: int = 2
    max_freq_width: int = 8
    n_time_masks: int = 2
    max_time_width: int = 20
    seed: int = 0

    def __post_init__(self):
        if min(self.n_freq_masks, self.max_freq_width, self.n_time_masks, self.max_time_width) < 0:
            raise ContractError("SpecAug counts and widths must be non-negative")


def spec_augment(x: FeatureSequence, policy: SpecAugPolicy,
                 rng: np.random.Generator | None = None) -> FeatureSequence:
    """Replace random frequency bands and time spans with the utterance mean.

    Time masks stay inside the valid region. Pass ``rng`` to draw from a
    running generator instead of ``policy.seed``.
    """
    rng = rng if rng is not None else np.random.default_rng(policy.seed)
    values = x.values.copy()
    n_valid = x.valid_length
    d = values.shape[1]
    fill = values[:n_valid].mean() if n_valid else 0.0
    for _ in range(policy.n_freq_masks):
        width = int(rng.integers(0, min(policy.max_freq_width, d) + 1))
        start = int(rng.integers(0, d - width + 1))
        values[:, start:start + width] = fill
    for _ in range(policy.n_time_masks):
        width = int(rng.integers(0, min(policy.max_time_width, n_valid) + 1))
        start = int(rng.integers(0, n_valid - width + 1))
        values[start:start + width] = fill
    return FeatureSequence(values, x.valid_length, x.utt_id)


# Container: magic, u16 id length, utf-8 id, u32 T_in, u32 d_fbank, float32 LE row-major.

def write_feature_file(path: str | Path, feats: FeatureSequence) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    uid = feats.utt_id.encode("utf-8")
    t, d = feats.values.shape
    with path.open("wb") as fh:
        fh.write(_MAGIC + struct.pack("<H", len(uid)) + uid + struct.pack("<II", t, d))
        fh.write(feats.values.astype("<f4").tobytes(order="C"))


def read_feature_file(path: str | Path) -> FeatureSequence:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise AudioFormatError(f"{path}: not a feature container")
    (n,) = struct.unpack_from("<H", raw, 4)
    uid = raw[6:6 + n].decode("utf-8")
    t, d = struct.unpack_from("<II", raw, 6 + n)
    offset = 14 + n
    if len(raw) - offset != 4 * t * d:
        raise AudioFormatError(f"{path}: truncated feature matrix")
    values = np.frombuffer(raw, dtype="<f4", offset=offset).reshape(t, d).astype(np.float32)
    return FeatureSequence(values, t, uid)
