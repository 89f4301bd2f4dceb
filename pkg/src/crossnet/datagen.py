"""Synthetic multi-channel mixtures: speech-like sources, delay plus decaying-noise
room responses, sensor noise, and a WAV/JSON dataset writer.

Each source reaches each microphone through a fractional-delay direct path with
1/r attenuation followed by an exponentially decaying Gaussian tail.  The
direct-path images at every microphone are the training targets; mic 0 is the
reference.  Everything is seeded from a single integer per scene.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from . import dsp
from .errors import ConfigurationError, ContractError, FormatError

SPEED_OF_SOUND = 343.0
MANIFEST_VERSION = 1
T60_RANGE = (0.2, 0.5)
SNR_RANGE = (20.0, 30.0)
LEVEL_RANGE = (-5.0, 5.0)
DISTANCE_RANGE = (1.0, 2.0)
SINC_HALF_WIDTH = 16


@dataclass
class SceneSpec:
    seed: int
    C: int = 2
    M: int = 1
    duration: float = 1.0
    sample_rate: int = 8000
    t60: float = 0.3  # 0 gives an anechoic scene
    snr_db: float | None = 25.0  # None disables sensor noise
    levels_db: list[float] = field(default_factory=lambda: [0.0, 0.0])
    array_radius: float = 0.1
    distances: list[float] = field(default_factory=lambda: [1.5, 1.5])
    azimuths: list[float] = field(default_factory=lambda: [0.0, math.pi / 2])

    def __post_init__(self):
        if self.C < 1 or self.M < 1:
            raise ConfigurationError("need at least one speaker and one microphone")
        if self.sample_rate not in dsp.SAMPLE_RATES:
            raise ConfigurationError(f"sample rate must be one of {dsp.SAMPLE_RATES}")
        if self.t60 != 0 and not T60_RANGE[0] <= self.t60 <= T60_RANGE[1]:
            raise ConfigurationError(f"t60={self.t60} outside {T60_RANGE} (or 0 for anechoic)")
        if self.snr_db is not None and not SNR_RANGE[0] <= self.snr_db <= SNR_RANGE[1]:
            raise ConfigurationError(f"snr_db={self.snr_db} outside {SNR_RANGE}")
        for name in ("levels_db", "distances", "azimuths"):
            if len(getattr(self, name)) != self.C:
                raise ConfigurationError(f"{name} needs one entry per speaker")
        if any(not LEVEL_RANGE[0] <= v <= LEVEL_RANGE[1] for v in self.levels_db):
            raise ConfigurationError(f"levels_db {self.levels_db} outside {LEVEL_RANGE}")
        if any(not DISTANCE_RANGE[0] <= d <= DISTANCE_RANGE[1] for d in self.distances):
            raise ConfigurationError(f"distances {self.distances} outside {DISTANCE_RANGE}")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    @classmethod
    def sample(cls, seed: int, C: int = 2, M: int = 1, duration: float = 1.0, sample_rate: int = 8000,
               anechoic: bool = False, noise: bool = True) -> "SceneSpec":
        """Draw a scene: speaker 0 at 0 dB, the others within +-5 dB of it."""
        rng = np.random.default_rng([seed, 0])
        t60 = 0.0 if anechoic else float(rng.uniform(*T60_RANGE))
        snr = float(rng.uniform(*SNR_RANGE)) if noise else None
        levels = [0.0] + [float(v) for v in rng.uniform(*LEVEL_RANGE, size=C - 1)]
        distances = [float(v) for v in rng.uniform(*DISTANCE_RANGE, size=C)]
        azimuths = [float(v) for v in rng.uniform(0, 2 * math.pi, size=C)]
        return cls(seed, C, M, duration, sample_rate, t60, snr, levels, 0.1, distances, azimuths)

    def mic_positions(self) -> np.ndarray:
        """``[M, 2]`` positions on a circle around the origin; a single mic sits at the centre."""
        if self.M == 1:
            return np.zeros((1, 2))
        ang = 2 * np.pi * np.arange(self.M) / self.M
        return self.array_radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)

    def source_positions(self) -> np.ndarray:
        d, a = np.asarray(self.distances), np.asarray(self.azimuths)
        return np.stack([d * np.cos(a), d * np.sin(a)], axis=1)


@dataclass
class ImpulseResponse:
    direct: np.ndarray
    tail: np.ndarray
    delay: float  # propagation delay in samples
    distance: float

    @property
    def full(self) -> np.ndarray:
        return self.direct + self.tail


def synth_source(seed: int, duration: float, sample_rate: int = 8000) -> np.ndarray:
    """Speech-like stand-in: a gliding harmonic complex with syllabic modulation and pauses."""
    if duration < 0.5:
        raise ContractError(f"source duration {duration} s is below the 0.5 s minimum")
    rng = np.random.default_rng([seed, 1])
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(80, 300)
    # slow pitch contour, +-15 %
    contour = 1 + 0.15 * np.sin(2 * np.pi * rng.uniform(0.5, 2) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 * contour) / sample_rate
    tilt = rng.uniform(0.6, 1.2)
    formant = rng.uniform(400, 1500)
    x = np.zeros(n)
    for k in range(1, int(0.45 * sample_rate / f0) + 1):
        amp = k ** -tilt * (1 + 2 * np.exp(-((k * f0 - formant) / 300) ** 2))
        x += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    x += 0.05 * rng.normal(size=n)
    am = 1 + 0.8 * np.sin(2 * np.pi * rng.uniform(2, 8) * t + rng.uniform(0, 2 * np.pi))
    x *= am
    gate = np.ones(n)
    for _ in range(rng.integers(1, 4)):
        length = int(rng.uniform(0.05, 0.15) * sample_rate)
        start = int(rng.integers(0, max(1, n - length)))
        ramp = min(length // 4, 80)
        g = np.zeros(length)
        if ramp:
            g[:ramp] = np.linspace(1, 0, ramp)
            g[-ramp:] = np.linspace(0, 1, ramp)
        gate[start:start + length] *= g[: n - start]
    x *= gate
    x -= x.mean()
    return x / x.std()


def _fractional_delay(delay: float, length: int) -> np.ndarray:
    n = np.arange(length)
    taps = np.sinc(n - delay)
    span = np.abs(n - delay) <= SINC_HALF_WIDTH
    window = 0.5 + 0.5 * np.cos(np.pi * (n - delay) / SINC_HALF_WIDTH)
    return np.where(span, taps * window, 0.0)


def tail_envelope(n: np.ndarray, t60: float, sample_rate: int) -> np.ndarray:
    """Amplitude envelope whose energy falls 60 dB over ``t60`` seconds."""
    return 10.0 ** (-3.0 * n / (t60 * sample_rate))


def synth_rir(spec: SceneSpec, source_index: int, mic_index: int) -> ImpulseResponse:
    """Direct path plus exponential tail for one source/microphone pair.

    The tail starts one sample after the direct-path peak and carries a total
    energy of ``t60 / 0.5`` times the direct-path energy, so longer
    reverberation always means more tail energy.
    """
    r = float(np.linalg.norm(spec.source_positions()[source_index] - spec.mic_positions()[mic_index]))
    delay = r / SPEED_OF_SOUND * spec.sample_rate
    start = int(math.ceil(delay)) + 1
    tail_len = int(math.ceil(1.2 * spec.t60 * spec.sample_rate)) if spec.t60 > 0 else 0
    length = max(start + tail_len, int(math.ceil(delay)) + SINC_HALF_WIDTH + 1)
    direct = _fractional_delay(delay, length) / r
    tail = np.zeros(length)
    if spec.t60 > 0:
        rng = np.random.default_rng([spec.seed, 2, source_index, mic_index])
        body = rng.normal(size=tail_len) * tail_envelope(np.arange(tail_len), spec.t60, spec.sample_rate)
        target = np.sum(direct ** 2) * spec.t60 / 0.5
        tail[start:start + tail_len] = body * math.sqrt(target / np.sum(body ** 2))
    return ImpulseResponse(direct, tail, delay, r)


def mix(spec: SceneSpec) -> tuple[dsp.Waveform, np.ndarray, dict]:
    """Render a scene: ``y = sum_c (s_c + h_c) + v`` at every microphone.

    Returns the mixture ``[M, N]``, the direct-path references ``[C, M, N]``
    and scene metadata.  Sensor noise is white, independent per microphone,
    and scaled so its power sits ``snr_db`` below the reverberant speech at
    the reference microphone.
    """
    n = spec.n_samples
    refs = np.zeros((spec.C, spec.M, n))
    tails = np.zeros((spec.C, spec.M, n))
    for c in range(spec.C):
        src = synth_source(spec.seed * 1000 + c, spec.duration, spec.sample_rate) * 10 ** (spec.levels_db[c] / 20)
        for m in range(spec.M):
            h = synth_rir(spec, c, m)
            refs[c, m] = fftconvolve(src, h.direct)[:n]
            if spec.t60 > 0:
                tails[c, m] = fftconvolve(src, h.tail)[:n]
    speech = np.zeros((spec.M, n))
    for c in range(spec.C):
        speech += refs[c] + tails[c]
    noise = np.zeros((spec.M, n))
    if spec.snr_db is not None:
        rng = np.random.default_rng([spec.seed, 3])
        p_speech = np.mean(speech[0] ** 2)
        raw = rng.normal(size=(spec.M, n))
        noise = raw * np.sqrt(p_speech * 10 ** (-spec.snr_db / 10) / np.mean(raw ** 2, axis=1, keepdims=True))
    mixture = speech + noise
    meta = {"seed": spec.seed, "t60": spec.t60, "snr_db": spec.snr_db, "levels_db": list(spec.levels_db),
            "distances": list(spec.distances), "azimuths": list(spec.azimuths)}
    return dsp.Waveform(mixture, spec.sample_rate), refs, meta


# ---------------------------------------------------------------------------
# datasets on disk


@dataclass
class SceneTemplate:
    C: int = 2
    M: int = 1
    duration: float = 1.0
    sample_rate: int = 8000
    anechoic: bool = False
    noise: bool = True
    seed: int = 0

    def spec(self, index: int) -> SceneSpec:
        return SceneSpec.sample(self.seed + index, self.C, self.M, self.duration, self.sample_rate,
                                self.anechoic, self.noise)


def dataset_generate(count: int, out_dir: str | Path, template: SceneTemplate | None = None) -> dict:
    """Write ``count`` scenes as float32 WAVs plus ``manifest.json``; returns the manifest."""
    template = template or SceneTemplate()
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc}") from exc
    scenes = []
    for i in range(count):
        spec = template.spec(i)
        mixture, refs, meta = mix(spec)
        sid = f"scene{i:05d}"
        mix_path = f"{sid}_mix.wav"
        dsp.write_wav(out / mix_path, mixture)
        ref_paths = []
        for c in range(spec.C):
            p = f"{sid}_s{c + 1}.wav"
            dsp.write_wav(out / p, dsp.Waveform(refs[c], spec.sample_rate))
            ref_paths.append(p)
        scenes.append({"id": sid, "seed": spec.seed, "mixture_path": mix_path, "ref_paths": ref_paths,
                       "t60": meta["t60"], "snr_db": meta["snr_db"], "levels_db": meta["levels_db"]})
    manifest = {"version": MANIFEST_VERSION, "scenes": scenes}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


SCENE_FIELDS = {"id": str, "seed": int, "mixture_path": str, "ref_paths": list, "t60": (int, float),
                "levels_db": list}


def load_manifest(path: str | Path) -> dict:
    """Read and validate a manifest; relative paths are resolved against its directory."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if not isinstance(data, dict) or data.get("version") != MANIFEST_VERSION:
        raise FormatError(f"{path}: field 'version' must be {MANIFEST_VERSION}")
    if not isinstance(data.get("scenes"), list):
        raise FormatError(f"{path}: field 'scenes' must be a list")
    for i, sc in enumerate(data["scenes"]):
        for key, typ in SCENE_FIELDS.items():
            if not isinstance(sc.get(key), typ):
                raise FormatError(f"{path}: scenes[{i}].{key} missing or of the wrong type")
        if sc.get("snr_db") is not None and not isinstance(sc["snr_db"], (int, float)):
            raise FormatError(f"{path}: scenes[{i}].snr_db must be a number or null")
    data["root"] = str(path.parent)
    return data


@dataclass
class Utterance:
    id: str
    mixture: np.ndarray  # [M, N]
    refs: np.ndarray  # [C, N] at the reference microphone


def load_utterances(manifest: dict) -> list[Utterance]:
    root = Path(manifest.get("root", "."))
    out = []
    for sc in manifest["scenes"]:
        mixture = dsp.read_wav(root / sc["mixture_path"]).samples
        refs = np.stack([dsp.read_wav(root / p).samples[0] for p in sc["ref_paths"]])
        out.append(Utterance(sc["id"], mixture, refs))
    return out
