"""Detection scores, EER and normalized minimum t-DCF.

Scores are oriented so that higher means more bonafide, and a trial is
accepted as bonafide when ``score >= threshold``.  Both metrics sweep the
threshold over every distinct score plus one point just above the maximum
(where everything is rejected).
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .tensor import BONAFIDE, SPOOF, log_softmax


@dataclass(frozen=True)
class ScoreRecord:
    utt_id: str
    score: float
    label: str = "unknown"


def score(logits: np.ndarray) -> np.ndarray:
    """Log-likelihood ratio log p(bonafide) - log p(spoof) per row of [B, 2] logits.

    The softmax normalizer cancels, leaving the raw logit difference.
    """
    logits = np.asarray(logits)
    return logits[..., BONAFIDE] - logits[..., SPOOF]


def score_via_log_softmax(logits: np.ndarray) -> np.ndarray:
    """The literal two-log-probability form of :func:`score`."""
    logp = log_softmax(np.atleast_2d(np.asarray(logits, dtype=np.float64)))
    return logp[:, BONAFIDE] - logp[:, SPOOF]


def split_scores(records: Iterable[ScoreRecord]) -> tuple[np.ndarray, np.ndarray]:
    bona, spoof = [], []
    for r in records:
        if r.label == "bonafide":
            bona.append(r.score)
        elif r.label == "spoof":
            spoof.append(r.score)
    return np.array(bona, dtype=np.float64), np.array(spoof, dtype=np.float64)


def error_rates(bonafide, spoof) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Miss and false-alarm rates over the threshold sweep.

    Returns ``(p_miss, p_fa, thresholds)``; thresholds are the sorted distinct
    scores followed by the next float above the maximum.
    """
    bona = np.sort(np.asarray(bonafide, dtype=np.float64))
    spf = np.sort(np.asarray(spoof, dtype=np.float64))
    if bona.size == 0 or spf.size == 0:
        raise ValueError(
            f"need at least one bonafide and one spoof score (got {bona.size} and {spf.size})"
        )
    if not (np.all(np.isfinite(bona)) and np.all(np.isfinite(spf))):
        raise ValueError("scores must be finite")
    thr = np.unique(np.concatenate([bona, spf]))
    thr = np.append(thr, np.nextafter(thr[-1], np.inf))
    p_miss = np.searchsorted(bona, thr, side="left") / bona.size
    p_fa = (spf.size - np.searchsorted(spf, thr, side="left")) / spf.size
    return p_miss, p_fa, thr


def compute_eer(bonafide, spoof) -> tuple[float, float]:
    """Equal error rate and the threshold where it occurs.

    The miss-minus-false-alarm curve is non-decreasing over the sweep; where
    it jumps over zero between two sweep points both rates and the threshold
    are linearly interpolated to the crossing.
    """
    p_miss, p_fa, thr = error_rates(bonafide, spoof)
    diff = p_miss - p_fa
    i = int(np.argmax(diff >= 0))
    if diff[i] == 0:
        return float(p_miss[i]), float(thr[i])
    alpha = -diff[i - 1] / (diff[i] - diff[i - 1])
    eer = p_miss[i - 1] + alpha * (p_miss[i] - p_miss[i - 1])
    threshold = thr[i - 1] + alpha * (thr[i] - thr[i - 1])
    return float(eer), float(threshold)


@dataclass(frozen=True)
class TdcfCost:
    """Cost model for the tandem detection cost function.

    Priors and costs default to the ASVspoof 2019 LA evaluation plan; the ASV
    operating point (the three error rates) has no default and must be given.
    """

    p_miss_asv: float
    p_fa_asv: float
    p_miss_spoof_asv: float
    p_target: float = 0.95 * 0.99
    p_nontarget: float = 0.95 * 0.01
    p_spoof: float = 0.05
    c_miss_asv: float = 1.0
    c_fa_asv: float = 10.0
    c_miss_cm: float = 1.0
    c_fa_cm: float = 10.0

    def __post_init__(self):
        priors = (self.p_target, self.p_nontarget, self.p_spoof)
        if any(not 0 < p < 1 for p in priors):
            raise ConfigError(f"t-DCF priors must lie in (0, 1), got {priors}")
        if abs(sum(priors) - 1) > 1e-9:
            raise ConfigError(f"t-DCF priors must sum to 1, got {sum(priors)!r}")
        costs = (self.c_miss_asv, self.c_fa_asv, self.c_miss_cm, self.c_fa_cm)
        if any(c < 0 for c in costs):
            raise ConfigError(f"t-DCF costs must be nonnegative, got {costs}")
        for name in ("p_miss_asv", "p_fa_asv", "p_miss_spoof_asv"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")

    def weights(self) -> tuple[float, float]:
        """(C1, C2): cost weights of the CM miss and false-alarm rates."""
        c1 = (self.p_target * (self.c_miss_cm - self.c_miss_asv * self.p_miss_asv)
              - self.p_nontarget * self.c_fa_asv * self.p_fa_asv)
        c2 = self.c_fa_cm * self.p_spoof * (1 - self.p_miss_spoof_asv)
        return c1, c2


def compute_min_tdcf(bonafide, spoof, cost: TdcfCost) -> tuple[float, float]:
    """Minimum over CM thresholds of the normalized t-DCF, and its threshold.

    t-DCF(thr) = C1 * p_miss_cm(thr) + C2 * p_fa_cm(thr), divided by
    min(C1, C2), the cost of the better trivial CM (accept all or reject all).
    """
    c1, c2 = cost.weights()
    if c1 <= 0 or c2 <= 0:
        raise ConfigError(
            f"degenerate t-DCF cost model: C1={c1:.6g}, C2={c2:.6g}; both must be positive"
        )
    p_miss, p_fa, thr = error_rates(bonafide, spoof)
    tdcf = (c1 * p_miss + c2 * p_fa) / min(c1, c2)
    i = int(np.argmin(tdcf))
    return float(tdcf[i]), float(thr[i])


# ---------------------------------------------------------------------------
# files


def write_scores(records: Iterable[ScoreRecord]) -> str:
    return "".join(f"{r.utt_id} {r.score:.6f}\n" for r in records)


def read_scores(text: str) -> list[ScoreRecord]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        cols = line.split()
        if not cols:
            continue
        if len(cols) != 2:
            raise DataError(f"score line {lineno}: expected 'utt_id score', got {line!r}")
        try:
            value = float(cols[1])
        except ValueError:
            raise DataError(f"score line {lineno}: bad score {cols[1]!r}") from None
        if not np.isfinite(value):
            raise DataError(f"score line {lineno}: non-finite score {cols[1]!r}")
        out.append(ScoreRecord(cols[0], value))
    return out


def parse_key_values(text: str, source: str = "config") -> dict[str, str]:
    """``key=value`` lines; '#' starts a comment, blank lines are ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source} line {lineno}: expected key=value, got {line!r}")
        out[key.strip()] = value.strip()
    return out


def parse_cost(text: str, source: str = "cost file") -> TdcfCost:
    kv = parse_key_values(text, source)
    known = {f.name for f in fields(TdcfCost)}
    unknown = sorted(set(kv) - known)
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) {', '.join(unknown)}")
    try:
        values = {k: float(v) for k, v in kv.items()}
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from None
    try:
        return TdcfCost(**values)
    except TypeError:
        missing = sorted(k for k in ("p_miss_asv", "p_fa_asv", "p_miss_spoof_asv") if k not in values)
        raise ConfigError(f"{source}: missing required key(s) {', '.join(missing)}") from None


def read_cost(path) -> TdcfCost:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read cost file {path}: {e}") from e
    return parse_cost(text, str(path))


def format_report(rows: Sequence[tuple[str, float, float]]) -> str:
    lines = ["metric,value,threshold"]
    lines += [f"{name},{value:.6f},{thr:.6f}" for name, value, thr in rows]
    return "\n".join(lines) + "\n"
