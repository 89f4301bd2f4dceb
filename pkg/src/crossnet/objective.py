"""Training losses: SI-SDR with the target rescaled to the estimate, normalized
magnitude L1, and utterance-level permutation-invariant training."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from . import dsp
from . import tensor as T
from .errors import ConfigurationError, DegenerateInputError, DimensionError
from .tensor import Tensor

MAX_PIT_SPEAKERS = 6
LOSS_KINDS = ("mag+sisdr", "sisdr")
NUMERATORS = ("reference", "projection")

LossValue = Union[Tensor, "tuple[Tensor, Tensor]"]


@dataclass
class LossBreakdown:
    total: Tensor
    mag_term: float
    sisdr_term: float
    permutation: tuple[int, ...]  # estimate permutation[c] is matched to reference c
    alpha: np.ndarray  # per-speaker scale applied to the reference

    def __post_init__(self):
        if sorted(self.permutation) != list(range(len(self.permutation))):
            raise ValueError(f"{self.permutation} is not a permutation")


def _check_pair(est: Tensor, ref: np.ndarray) -> np.ndarray:
    ref = np.asarray(ref, dtype=np.float64)
    if ref.ndim == 1:
        ref = ref[None]
    if est.shape != ref.shape:
        raise DimensionError(f"estimate {est.shape} and reference {ref.shape} differ in shape")
    return ref


def scale_factors(est: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """alpha_c = <s_c, s_hat_c> / <s_c, s_c> for each speaker row."""
    ref = np.atleast_2d(ref)
    energy = np.sum(ref * ref, axis=-1)
    if np.any(energy == 0):
        raise DegenerateInputError("reference signal is identically zero")
    return np.sum(ref * np.atleast_2d(est), axis=-1) / energy


def sisdr_loss(est: Tensor, ref: np.ndarray, eps: float = 1e-8, numerator: str = "reference") -> Tensor:
    """Negated sum over speakers of 10 log10(num / (|s_hat - alpha s|^2 + eps)).

    ``est`` is ``[C, N]`` (or ``[N]``), ``ref`` the matching array, and
    alpha = <s, s_hat> / |s|^2.  With ``numerator="reference"`` num is |s|^2,
    which is not invariant to rescaling of the estimate: shrinking s_hat
    shrinks the residual, so minimizing it alone drives estimates toward
    zero.  ``numerator="projection"`` uses |alpha s|^2, the scale-invariant
    form.  A perfect estimate saturates at ``-10 log10(|s|^2 / eps)``.
    """
    if numerator not in NUMERATORS:
        raise ConfigurationError(f"numerator must be one of {NUMERATORS}, got {numerator!r}")
    est = T.as_tensor(est)
    est = est if est.ndim == 2 else T.reshape(est, (1, -1))
    ref = _check_pair(est, ref)
    energy = np.sum(ref * ref, axis=-1)
    if np.any(energy == 0):
        raise DegenerateInputError("reference signal is identically zero")
    alpha = T.tsum(est * Tensor(ref), axis=-1) * Tensor(1.0 / energy)
    resid = est - T.reshape(alpha, (-1, 1)) * Tensor(ref)
    den = T.tsum(resid * resid, axis=-1) + eps
    to_db = 10.0 / math.log(10.0)
    if numerator == "reference":
        return T.tsum(T.log(den)) * to_db - float(np.sum(10.0 * np.log10(energy)))
    num = alpha * alpha * Tensor(energy)
    return T.tsum(T.log(den) - T.log(num + eps)) * to_db


def mag_loss(est: Tensor, ref: np.ndarray, frame_len: int = dsp.FRAME_LEN, hop: int = dsp.HOP) -> Tensor:
    """Sum over speakers of | |STFT(s_hat)| - |STFT(s)| |_1 / | |STFT(s)| |_1."""
    est = T.as_tensor(est)
    est = est if est.ndim == 2 else T.reshape(est, (1, -1))
    ref = _check_pair(est, ref)
    ref_mag = np.abs(dsp.stft(dsp.Waveform(ref), frame_len, hop).values)  # [C, F, T]
    norm = ref_mag.sum(axis=(1, 2))
    if np.any(norm == 0):
        raise DegenerateInputError("reference spectrogram is identically zero")
    mag = T.complex_abs(*dsp.stft_tensor(est, frame_len, hop))
    per = T.tsum(T.tabs(mag - Tensor(ref_mag)), axis=(1, 2)) * Tensor(1.0 / norm)
    return T.tsum(per)


def make_loss_fn(kind: str = "mag+sisdr", frame_len: int = dsp.FRAME_LEN, hop: int = dsp.HOP,
                 eps: float = 1e-8, numerator: str = "reference") -> Callable[[Tensor, np.ndarray], LossValue]:
    """``"sisdr"`` returns the SI-SDR term alone; ``"mag+sisdr"`` returns ``(mag, sisdr)``."""
    if kind not in LOSS_KINDS:
        raise ConfigurationError(f"unknown loss {kind!r}; expected one of {LOSS_KINDS}")
    if numerator not in NUMERATORS:
        raise ConfigurationError(f"numerator must be one of {NUMERATORS}, got {numerator!r}")
    if kind == "sisdr":
        return lambda est, ref: sisdr_loss(est, ref, eps, numerator)
    return lambda est, ref: (mag_loss(est, ref, frame_len, hop), sisdr_loss(est, ref, eps, numerator))


def _split(value: LossValue) -> tuple[Tensor, float, float]:
    if isinstance(value, tuple):
        mag, si = value
        return mag + si, mag.item(), si.item()
    return value, 0.0, value.item()


def pit_loss(est: Tensor, ref: np.ndarray, loss_fn: Callable[[Tensor, np.ndarray], LossValue]) -> LossBreakdown:
    """Minimum of ``loss_fn`` over all assignments of estimates to references.

    Every permutation is scored without recording; only the winning one is
    re-evaluated on the tape, so gradients flow through that assignment alone.
    Ties go to the first permutation in lexicographic order.
    """
    est = T.as_tensor(est)
    ref = _check_pair(est, ref)
    c = ref.shape[0]
    if c > MAX_PIT_SPEAKERS:
        raise ConfigurationError(f"PIT enumerates C! assignments; C={c} exceeds {MAX_PIT_SPEAKERS}")
    best, best_perm = math.inf, None
    with T.no_grad():
        for perm in itertools.permutations(range(c)):
            val = _split(loss_fn(T.getitem(est, list(perm)), ref))[0].item()
            if best_perm is None or val < best:
                best, best_perm = val, perm
    chosen = T.getitem(est, list(best_perm))
    total, mag, si = _split(loss_fn(chosen, ref))
    alpha = scale_factors(chosen.data, ref)
    return LossBreakdown(total, mag, si, best_perm, alpha)
