"""Front and back end of the separator: normalization, STFT/iSTFT, RI stacking, WAV I/O.

Two routes to the transform are provided.  ``stft``/``istft`` work on plain
numpy arrays through ``numpy.fft``; ``stft_tensor``/``istft_tensor`` are tape
primitives built from explicit DFT basis matrices so the losses and the output
layer can be differentiated through them.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import ContractError, DegenerateInputError, DimensionError, FormatError
from .tensor import Tensor, make_op

FRAME_LEN = 256
HOP = 128
SAMPLE_RATES = (8000, 16000)


@dataclass
class Waveform:
    samples: np.ndarray  # [M, N]
    sample_rate: int = 8000

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[None, :]
        if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
            raise DimensionError(f"waveform must be [channels, samples], got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ContractError("waveform contains non-finite samples")
        self.samples = s

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]


@dataclass
class Spectrogram:
    values: np.ndarray  # complex [M, F, T]
    frame_len: int = FRAME_LEN
    hop: int = HOP
    window: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.window is None:
            self.window = hann(self.frame_len)
        if self.values.ndim == 2:
            self.values = self.values[None]
        if self.values.shape[1] != self.frame_len // 2 + 1:
            raise DimensionError(f"{self.values.shape[1]} bins do not match frame length {self.frame_len}")

    @property
    def n_frames(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class NormalizationState:
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise DegenerateInputError(f"normalization scale must be positive, got {self.sigma}")


def hann(frame_len: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(frame_len) / frame_len)


def n_frames(n_samples: int, frame_len: int = FRAME_LEN, hop: int = HOP) -> int:
    if n_samples < frame_len:
        raise ContractError(f"signal of {n_samples} samples is shorter than one frame ({frame_len})")
    return 1 + (n_samples - frame_len) // hop


def n_samples_for_frames(frames: int, frame_len: int = FRAME_LEN, hop: int = HOP) -> int:
    return frame_len + (frames - 1) * hop


def cola_interior(n_samples: int, frame_len: int = FRAME_LEN, hop: int = HOP) -> slice:
    """Sample range covered by every overlapping frame (edges only see one frame)."""
    t = n_frames(n_samples, frame_len, hop)
    return slice(frame_len - hop, (t - 1) * hop + hop)


def normalize(w: Waveform, ref_channel: int = 0) -> tuple[Waveform, NormalizationState]:
    """Divide every channel by the standard deviation of the reference channel."""
    if not 0 <= ref_channel < w.channels:
        raise ContractError(f"reference channel {ref_channel} out of range for {w.channels} channels")
    sigma = float(np.std(w.samples[ref_channel]))
    if sigma == 0.0:
        raise DegenerateInputError("reference channel has zero energy")
    return Waveform(w.samples / sigma, w.sample_rate), NormalizationState(sigma)


def denormalize(w: Waveform, state: NormalizationState) -> Waveform:
    return Waveform(w.samples * state.sigma, w.sample_rate)


def _frame(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    t = n_frames(x.shape[-1], frame_len, hop)
    idx = np.arange(t)[:, None] * hop + np.arange(frame_len)[None, :]
    return x[..., idx]


def _overlap_add(frames: np.ndarray, hop: int, length: int) -> np.ndarray:
    """Sum ``frames[..., t, :]`` into ``out[..., t*hop:t*hop+L]``."""
    t, frame_len = frames.shape[-2:]
    covered = (t - 1) * hop + frame_len
    out = np.zeros(frames.shape[:-2] + (max(covered, length),))
    if frame_len % hop == 0:
        r = frame_len // hop
        chunks = out[..., :(t + r - 1) * hop].reshape(frames.shape[:-2] + (t + r - 1, hop))
        for j in range(r):
            chunks[..., j:j + t, :] += frames[..., j * hop:(j + 1) * hop]
    else:
        for i in range(t):
            out[..., i * hop:i * hop + frame_len] += frames[..., i, :]
    return out[..., :length]


def stft(w: Waveform, frame_len: int = FRAME_LEN, hop: int = HOP, window: np.ndarray | None = None) -> Spectrogram:
    """One-sided STFT without centre padding: frame ``t`` starts at sample ``t*hop``."""
    window = hann(frame_len) if window is None else np.asarray(window, dtype=np.float64)
    frames = _frame(w.samples, frame_len, hop) * window
    values = np.fft.rfft(frames, axis=-1).transpose(0, 2, 1)
    return Spectrogram(values, frame_len, hop, window)


def _wola_norm(n_frames_: int, window: np.ndarray, hop: int, length: int) -> np.ndarray:
    wsq = np.broadcast_to(window ** 2, (n_frames_, window.size))
    return _overlap_add(wsq, hop, length)


def istft(spec: Spectrogram, target_len: int) -> Waveform:
    """Weighted overlap-add inverse with squared-window normalization."""
    frames = np.fft.irfft(spec.values.transpose(0, 2, 1), n=spec.frame_len, axis=-1) * spec.window
    y = _overlap_add(frames, spec.hop, target_len)
    norm = _wola_norm(spec.n_frames, spec.window, spec.hop, target_len)
    nz = norm > 1e-10
    y[..., nz] /= norm[nz]
    return Waveform(y)


def stack_ri(spec: Spectrogram) -> np.ndarray:
    """``[M, F, T]`` complex -> ``[2M, F, T]`` real as Re(mic1), Im(mic1), Re(mic2), ..."""
    m, f, t = spec.values.shape
    out = np.empty((2 * m, f, t))
    out[0::2] = spec.values.real
    out[1::2] = spec.values.imag
    return out


def unstack_ri(x: np.ndarray, frame_len: int | None = None, hop: int | None = None) -> list[Spectrogram]:
    """Inverse of ``stack_ri``: ``[2C, F, T]`` -> C single-channel spectrograms."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] % 2:
        raise ContractError(f"expected an even number of RI channels, got shape {x.shape}")
    frame_len = frame_len or 2 * (x.shape[1] - 1)
    hop = hop or frame_len // 2
    return [Spectrogram((x[2 * c] + 1j * x[2 * c + 1])[None], frame_len, hop) for c in range(x.shape[0] // 2)]


# ---------------------------------------------------------------------------
# differentiable transforms


@functools.lru_cache(maxsize=8)
def _analysis_basis(frame_len: int) -> tuple[np.ndarray, np.ndarray]:
    n = np.arange(frame_len)[:, None]
    f = np.arange(frame_len // 2 + 1)[None, :]
    ang = 2 * np.pi * n * f / frame_len
    return np.cos(ang), -np.sin(ang)


@functools.lru_cache(maxsize=8)
def _synthesis_basis(frame_len: int) -> tuple[np.ndarray, np.ndarray]:
    f = np.arange(frame_len // 2 + 1)[:, None]
    n = np.arange(frame_len)[None, :]
    weight = np.full((frame_len // 2 + 1, 1), 2.0)
    weight[0] = 1.0
    weight[-1] = 1.0
    ang = 2 * np.pi * f * n / frame_len
    return weight * np.cos(ang) / frame_len, -weight * np.sin(ang) / frame_len


def stft_tensor(x: Tensor, frame_len: int = FRAME_LEN, hop: int = HOP) -> tuple[Tensor, Tensor]:
    """Real and imaginary STFT parts of ``x[..., N]`` as ``[..., F, T]`` tensors."""
    window = hann(frame_len)
    n = x.shape[-1]
    cos_b, sin_b = _analysis_basis(frame_len)
    frames = _frame(x.data, frame_len, hop) * window
    re = np.swapaxes(frames @ cos_b, -1, -2)
    im = np.swapaxes(frames @ sin_b, -1, -2)

    def grad_frames(g_re, g_im):
        gf = np.swapaxes(g_re, -1, -2) @ cos_b.T + np.swapaxes(g_im, -1, -2) @ sin_b.T
        return _overlap_add(gf * window, hop, n)

    # re and im share one frame gradient; each op contributes its own half
    def bw_re(g, needs):
        return (grad_frames(g, np.zeros_like(g)),)

    def bw_im(g, needs):
        return (grad_frames(np.zeros_like(g), g),)

    return make_op(re, (x,), bw_re, "stft_re"), make_op(im, (x,), bw_im, "stft_im")


def istft_tensor(re: Tensor, im: Tensor, length: int, frame_len: int = FRAME_LEN, hop: int = HOP) -> Tensor:
    """Differentiable WOLA inverse of ``[..., F, T]`` real/imaginary parts."""
    if re.shape != im.shape or re.shape[-2] != frame_len // 2 + 1:
        raise DimensionError(f"istft: parts {re.shape}/{im.shape} do not match frame length {frame_len}")
    window = hann(frame_len)
    t = re.shape[-1]
    cos_b, sin_b = _synthesis_basis(frame_len)
    frames = (np.swapaxes(re.data, -1, -2) @ cos_b + np.swapaxes(im.data, -1, -2) @ sin_b) * window
    norm = _wola_norm(t, window, hop, length)
    nz = norm > 1e-10
    scale = np.where(nz, 1.0 / np.where(nz, norm, 1.0), 0.0)
    y = _overlap_add(frames, hop, length) * scale

    def bw(g, needs):
        gy = g * scale
        covered = (t - 1) * hop + frame_len
        if covered > length:
            gy = np.concatenate([gy, np.zeros(gy.shape[:-1] + (covered - length,))], axis=-1)
        gf = _frame(gy[..., :covered], frame_len, hop) * window
        g_re = np.swapaxes(gf @ cos_b.T, -1, -2) if needs[0] else None
        g_im = np.swapaxes(gf @ sin_b.T, -1, -2) if needs[1] else None
        return g_re, g_im

    return make_op(y, (re, im), bw, "istft")


# ---------------------------------------------------------------------------
# WAV files


def read_wav(path: str | Path) -> Waveform:
    """Read a 16-bit PCM or 32-bit float RIFF file as ``[channels, samples]`` float64."""
    try:
        rate, data = wavfile.read(str(path))
    except (ValueError, EOFError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if rate not in SAMPLE_RATES:
        raise FormatError(f"{path}: unsupported sample rate {rate} (expected one of {SAMPLE_RATES})")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported sample format {data.dtype}")
    samples = samples[None, :] if samples.ndim == 1 else samples.T
    return Waveform(samples, rate)


def write_wav(path: str | Path, w: Waveform, pcm16: bool = False) -> None:
    """Write ``w`` as little-endian float32 (default) or clipped 16-bit PCM."""
    if w.sample_rate not in SAMPLE_RATES:
        raise FormatError(f"unsupported sample rate {w.sample_rate}")
    data = w.samples.T
    if pcm16:
        data = np.clip(np.round(data * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = data.astype(np.float32)
    if data.shape[1] == 1:
        data = data[:, 0]
    try:
        wavfile.write(str(path), w.sample_rate, data)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
