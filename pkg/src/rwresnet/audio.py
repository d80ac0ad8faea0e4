"""WAV and protocol parsing, waveform preprocessing, batching, synthetic data."""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DataError

TARGET_LEN = 128000
SAMPLE_RATE = 16000
LABELS = ("bonafide", "spoof")


class SampleRateWarning(UserWarning):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    source_id: str = ""


@dataclass(frozen=True)
class Trial:
    utt_id: str
    label: str
    attack_id: str = "-"
    speaker_id: str = "-"

    @property
    def target(self) -> int:
        """Class index: 1 for bonafide, 0 for spoof."""
        return 1 if self.label == "bonafide" else 0


@dataclass
class TrialSet:
    trials: list[Trial] = field(default_factory=list)
    root: str = ""

    def __len__(self):
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)

    @property
    def utt_ids(self) -> list[str]:
        return [t.utt_id for t in self.trials]

    @property
    def labels(self) -> np.ndarray:
        return np.array([t.target for t in self.trials], dtype=np.int64)


# ---------------------------------------------------------------------------
# WAV


def parse_wav(data: bytes, source_id: str = "") -> Waveform:
    """Decode a RIFF/WAVE PCM16 mono file; samples stay unscaled int16.

    Unknown chunks are skipped by their declared size.  A sample rate other
    than 16 kHz is accepted with a :class:`SampleRateWarning`.
    """
    if len(data) < 12:
        raise DataError(f"{source_id or 'wav'}: RIFF header needs 12 bytes, got {len(data)}")
    riff, _, wave = struct.unpack_from("<4sI4s", data, 0)
    if riff != b"RIFF" or wave != b"WAVE":
        raise DataError(f"{source_id or 'wav'}: not a RIFF/WAVE container (got {riff!r}/{wave!r})")

    pos, fmt, samples = 12, None, None
    while pos < len(data):
        if pos + 8 > len(data):
            raise DataError(f"{source_id or 'wav'}: truncated chunk header at byte {pos}")
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = pos + 8
        if cid == b"fmt ":
            if size < 16 or body + 16 > len(data):
                raise DataError(f"{source_id or 'wav'}: fmt chunk too short ({size} bytes)")
            fmt = struct.unpack_from("<HHIIHH", data, body)
        elif cid == b"data":
            if fmt is None:
                raise DataError(f"{source_id or 'wav'}: data chunk before fmt chunk")
            available = len(data) - body
            if available < size:
                raise DataError(
                    f"{source_id or 'wav'}: data chunk truncated: expected {size} bytes, got {available}"
                )
            if size % 2:
                raise DataError(f"{source_id or 'wav'}: data chunk size {size} is not a whole number of 16-bit samples")
            samples = np.frombuffer(data, dtype="<i2", count=size // 2, offset=body).astype(np.int16)
            break
        pos = body + size + (size & 1)

    if fmt is None:
        raise DataError(f"{source_id or 'wav'}: missing fmt chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if audio_format != 1:
        raise DataError(f"{source_id or 'wav'}: audio_format={audio_format}, only PCM (1) is supported")
    if bits != 16:
        raise DataError(f"{source_id or 'wav'}: bits_per_sample={bits}, only 16 is supported")
    if channels != 1:
        raise DataError(f"{source_id or 'wav'}: num_channels={channels}, only mono is supported")
    if samples is None:
        raise DataError(f"{source_id or 'wav'}: missing data chunk")
    if rate != SAMPLE_RATE:
        warnings.warn(
            f"{source_id or 'wav'}: sample_rate={rate} Hz (expected {SAMPLE_RATE}); processed as-is",
            SampleRateWarning,
            stacklevel=2,
        )
    return Waveform(samples, rate, source_id)


def serialize_wav(samples, sample_rate: int = SAMPLE_RATE) -> bytes:
    """Encode int16 samples as a canonical 44-byte-header PCM16 mono WAV."""
    pcm = np.asarray(samples)
    if pcm.dtype != np.int16:
        if np.any(pcm < -32768) or np.any(pcm > 32767):
            raise ValueError("samples out of the 16-bit range")
        pcm = pcm.astype(np.int16)
    payload = pcm.astype("<i2").tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, 1, 1, sample_rate, sample_rate * 2, 2, 16,
        b"data", len(payload),
    )
    return header + payload


def to_pcm16(x: np.ndarray) -> np.ndarray:
    """Float samples in [-1, 1] to int16, the inverse of :func:`scale` up to rounding."""
    return np.clip(np.round(np.asarray(x, dtype=np.float64) * 32768), -32768, 32767).astype(np.int16)


# ---------------------------------------------------------------------------
# preprocessing


def fix_length(w: Waveform, target: int = TARGET_LEN, rng: np.random.Generator | None = None) -> Waveform:
    """Cut or tile ``w`` to exactly ``target`` samples.

    Long signals keep their head (or a random crop when ``rng`` is given);
    short ones are tiled by repeating the whole signal, then truncated.
    """
    s = np.asarray(w.samples)
    n = len(s)
    if n == 0:
        raise DataError(f"{w.source_id or 'waveform'}: empty signal")
    if n == target:
        out = s
    elif n > target:
        start = int(rng.integers(0, n - target + 1)) if rng is not None else 0
        out = s[start:start + target]
    else:
        out = np.tile(s, -(-target // n))[:target]
    return Waveform(out, w.sample_rate, w.source_id)


def scale(w: Waveform) -> Waveform:
    """Divide 16-bit samples by 32768."""
    return Waveform(np.asarray(w.samples, dtype=np.float64) / 32768.0, w.sample_rate, w.source_id)


def preprocess(w: Waveform, target: int = TARGET_LEN, rng=None) -> np.ndarray:
    return scale(fix_length(w, target, rng)).samples


def load_audio(trials: TrialSet, root, target: int = TARGET_LEN, rng=None) -> dict[str, np.ndarray]:
    """Read ``<root>/<utt_id>.wav`` for every trial and preprocess it."""
    root = Path(root)
    out = {}
    for t in trials:
        path = root / f"{t.utt_id}.wav"
        try:
            data = path.read_bytes()
        except OSError as e:
            raise DataError(f"cannot read audio for {t.utt_id}: {e}") from e
        out[t.utt_id] = preprocess(parse_wav(data, t.utt_id), target, rng)
    return out


# ---------------------------------------------------------------------------
# protocol files


def parse_protocol(text: str, root: str = "") -> TrialSet:
    """Parse ``speaker utt_id - attack key`` lines (exactly 5 columns)."""
    trials, seen = [], set()
    for lineno, line in enumerate(text.splitlines(), 1):
        cols = line.split()
        if not cols:
            continue
        if len(cols) != 5:
            raise DataError(f"protocol line {lineno}: expected 5 columns, got {len(cols)}: {line!r}")
        speaker, utt, _, attack, key = cols
        if key not in LABELS:
            raise DataError(f"protocol line {lineno}: key must be bonafide or spoof, got {key!r}")
        if utt in seen:
            raise DataError(f"protocol line {lineno}: duplicate utt_id {utt!r}")
        seen.add(utt)
        trials.append(Trial(utt, key, attack, speaker))
    return TrialSet(trials, root)


def format_protocol(trials: TrialSet) -> str:
    return "".join(f"{t.speaker_id} {t.utt_id} - {t.attack_id} {t.label}\n" for t in trials)


def read_protocol(path) -> TrialSet:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read protocol {path}: {e}") from e
    return parse_protocol(text)


# ---------------------------------------------------------------------------
# synthetic data


def _synth_one(rng: np.random.Generator, length: int, spoof: bool) -> np.ndarray:
    t = np.arange(length) / SAMPLE_RATE
    x = np.zeros(length)
    for _ in range(2):
        freq = rng.uniform(100.0, 1500.0)
        amp = rng.uniform(0.3, 0.45)
        phase = rng.uniform(0, 2 * np.pi)
        x += amp * np.sin(2 * np.pi * freq * t + phase)
    x += rng.normal(0.0, 0.01, length)
    if spoof:
        peak = np.abs(x).max()
        clipped = np.clip(x, -0.5, 0.5)
        x = clipped * (peak / np.abs(clipped).max())
    return np.clip(x, -1.0, 1.0)


def synth_dataset(n_per_class: int, length: int = 8000, seed: int = 0, prefix: str = "SYN"):
    """Deterministic two-class toy corpus.

    Bonafide: two random-phase sinusoids plus Gaussian noise (sigma 0.01).
    Spoof: the same construction hard-clipped at 0.5 and rescaled back to its
    original peak, which adds odd harmonics.  Returns the trial set and a
    mapping utt_id -> float64 samples in [-1, 1].
    """
    rng = np.random.default_rng(seed)
    trials, audio = [], {}
    for i in range(2 * n_per_class):
        spoof = i % 2 == 1
        utt = f"{prefix}_{i:05d}"
        audio[utt] = _synth_one(rng, length, spoof)
        trials.append(Trial(utt, "spoof" if spoof else "bonafide", "SC" if spoof else "-", f"{prefix}_SPK"))
    return TrialSet(trials), audio


# ---------------------------------------------------------------------------
# batching


def make_batches(
    trials: TrialSet,
    audio: Mapping[str, np.ndarray],
    batch_size: int = 16,
    shuffle_seed: int | None = None,
    dtype=np.float32,
):
    """List of ``(waves[B,1,L], labels[B])``; the last batch may be partial.

    Order follows the protocol unless ``shuffle_seed`` is given.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(trials))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(trials))
    out = []
    for i in range(0, len(order), batch_size):
        chunk = [trials.trials[j] for j in order[i:i + batch_size]]
        waves = np.stack([audio[t.utt_id] for t in chunk]).astype(dtype)[:, None, :]
        out.append((waves, np.array([t.target for t in chunk], dtype=np.int64)))
    return out


def stack_audio(trials: TrialSet, audio: Mapping[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Arrays ``(waves[N, L], labels[N])`` in protocol order."""
    if len(trials) == 0:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
    try:
        waves = np.stack([audio[t.utt_id] for t in trials])
    except KeyError as e:
        raise DataError(f"no audio for utt_id {e.args[0]!r}") from None
    return waves, trials.labels
