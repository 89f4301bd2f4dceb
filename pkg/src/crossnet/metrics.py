"""Evaluation scores: SI-SDR, a gain-only SDR, their improvements over the
mixture, and PIT alignment of estimates to references.

Unbounded results are clipped to +-120 dB so reports stay finite JSON.  The
SDR here is the SNR after an optimal scalar gain, not the filtered BSS-Eval
SDR, and is reported under the key ``sdr_gain_only``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateInputError, DimensionError

DB_CAP = 120.0


def _db(num: float, den: float) -> float:
    if num <= 0:
        return -DB_CAP
    if den <= 0:
        return DB_CAP
    return float(np.clip(10.0 * np.log10(num / den), -DB_CAP, DB_CAP))


def _pair(est, ref) -> tuple[np.ndarray, np.ndarray]:
    est = np.asarray(est, dtype=np.float64).reshape(-1)
    ref = np.asarray(ref, dtype=np.float64).reshape(-1)
    if est.shape != ref.shape:
        raise DimensionError(f"estimate {est.shape} and reference {ref.shape} differ in length")
    if not np.any(ref):
        raise DegenerateInputError("reference signal is identically zero")
    return est, ref


def si_sdr_metric(est, ref) -> float:
    """10 log10(|b s|^2 / |s_hat - b s|^2) with b = <s_hat, s> / |s|^2."""
    est, ref = _pair(est, ref)
    beta = np.dot(est, ref) / np.dot(ref, ref)
    target = beta * ref
    noise = est - target
    return _db(float(np.dot(target, target)), float(np.dot(noise, noise)))


def sdr_metric(est, ref) -> float:
    """Gain-only SDR: 10 log10(|s|^2 / min_g |s - g s_hat|^2)."""
    est, ref = _pair(est, ref)
    ee = np.dot(est, est)
    g = np.dot(ref, est) / ee if ee > 0 else 0.0
    resid = ref - g * est
    return _db(float(np.dot(ref, ref)), float(np.dot(resid, resid)))


def si_sdr_i(est, ref, mix) -> float:
    return si_sdr_metric(est, ref) - si_sdr_metric(mix, ref)


def sdr_i(est, ref, mix) -> float:
    return sdr_metric(est, ref) - sdr_metric(mix, ref)


def best_permutation(est: np.ndarray, ref: np.ndarray) -> tuple[int, ...]:
    """Assignment maximizing mean SI-SDR; ``est[perm[c]]`` is matched to ``ref[c]``."""
    c = ref.shape[0]
    scores = np.array([[si_sdr_metric(est[i], ref[j]) for j in range(c)] for i in range(c)])
    best, best_perm = -np.inf, None
    for perm in itertools.permutations(range(c)):
        total = sum(scores[perm[j], j] for j in range(c))
        if best_perm is None or total > best:
            best, best_perm = total, perm
    return best_perm


@dataclass
class MetricReport:
    id: str
    si_sdr: list[float]
    si_sdr_i: list[float]
    sdr_gain_only: list[float]
    sdr_i: list[float]
    permutation: list[int] = field(default_factory=list)

    def mean(self, key: str) -> float:
        return float(np.mean(getattr(self, key)))

    def record(self) -> dict:
        """One JSONL record; metric values are speaker means in dB."""
        return {
            "id": self.id,
            "si_sdr": self.mean("si_sdr"),
            "si_sdr_i": self.mean("si_sdr_i"),
            "sdr_gain_only": self.mean("sdr_gain_only"),
            "sdr_i": self.mean("sdr_i"),
            "permutation": list(self.permutation),
        }


def evaluate(est, ref, mix, utt_id: str = "", align: bool = True) -> MetricReport:
    """Score ``est`` ``[C, N]`` against ``ref`` ``[C, N]``; ``mix`` is the reference-mic mixture ``[N]``."""
    est = np.atleast_2d(np.asarray(est, dtype=np.float64))
    ref = np.atleast_2d(np.asarray(ref, dtype=np.float64))
    mix = np.asarray(mix, dtype=np.float64).reshape(-1)
    if est.shape != ref.shape or mix.shape[0] != ref.shape[1]:
        raise DimensionError(f"shapes est {est.shape}, ref {ref.shape}, mix {mix.shape} do not line up")
    perm = best_permutation(est, ref) if align else tuple(range(ref.shape[0]))
    est = est[list(perm)]
    si, sii, sd, sdi = [], [], [], []
    for e, r in zip(est, ref):
        si.append(si_sdr_metric(e, r))
        sii.append(si[-1] - si_sdr_metric(mix, r))
        sd.append(sdr_metric(e, r))
        sdi.append(sd[-1] - sdr_metric(mix, r))
    return MetricReport(utt_id, si, sii, sd, sdi, list(perm))


SUMMARY_KEYS = ("si_sdr", "si_sdr_i", "sdr_gain_only", "sdr_i")


def summarize(records: Sequence[dict]) -> dict[str, float]:
    """Arithmetic mean of every metric over utterance records."""
    if not records:
        return {k: float("nan") for k in SUMMARY_KEYS}
    return {k: float(np.mean([r[k] for r in records])) for k in SUMMARY_KEYS}


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
