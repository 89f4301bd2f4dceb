"""The CrossNet separator: encoder, random-chunk positional encoding, stacked blocks, output layer.

Internally every block works on channels-last features ``[F, T, H]`` so the
pointwise layers are plain ``linear`` calls.  The public ``*_forward``
functions take and return ``[H, F, T]`` tensors and are thin wrappers around
the internal ones.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from . import dsp
from . import tensor as T
from .errors import ConfigurationError, ContractError, DimensionError
from .tensor import Tensor

Params = Mapping[str, Tensor]


@dataclass
class ModelConfig:
    M: int = 1
    C: int = 2
    F: int = 129
    H: int = 192
    H_prime: int = 16
    H_dprime: int = 384
    B: int = 12
    L: int = 4
    E: int | None = None  # ceil(512 / F) when omitted
    k: int = 5
    k_t: int = 5
    k_f: int = 3
    groups: int = 8
    T_max: int = 3749  # 60 s at 8 kHz with 256/128 framing
    use_rcpe: bool = True
    use_gmhsa: bool = True
    use_nb_mhsa: bool = False

    def __post_init__(self):
        if self.E is None:
            self.E = math.ceil(512 / self.F)
        self.validate()

    def validate(self) -> None:
        for name in ("M", "C", "F", "H", "H_prime", "H_dprime", "B", "L", "E", "k", "k_t", "k_f", "groups", "T_max"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.F < 2:
            raise ConfigurationError("need at least two frequency bins")
        if self.H % self.L:
            raise ConfigurationError(f"H={self.H} not divisible by L={self.L} heads")
        if self.H % self.groups or self.H_dprime % self.groups:
            raise ConfigurationError(f"H={self.H} and H_dprime={self.H_dprime} must be divisible by groups={self.groups}")
        for name in ("k", "k_t", "k_f"):
            if getattr(self, name) % 2 == 0:
                raise ConfigurationError(f"{name} must be odd")

    @property
    def frame_len(self) -> int:
        return 2 * (self.F - 1)

    @property
    def hop(self) -> int:
        return self.frame_len // 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {unknown}")
        return cls(**dict(data))

    @classmethod
    def from_json(cls, path: str | Path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def hash(self) -> int:
        return config_hash(self.to_dict())


def config_hash(obj) -> int:
    """64-bit digest of a JSON-serializable object with sorted keys."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


def tiny_config(**overrides) -> ModelConfig:
    """Small configuration used by the gradient suite."""
    base = dict(M=1, C=2, F=9, H=8, H_prime=4, H_dprime=16, B=2, L=2, E=2, T_max=64)
    base.update(overrides)
    return ModelConfig(**base)


# ---------------------------------------------------------------------------
# parameters


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every learnable tensor's name and shape; shared tensors appear once."""
    if cfg.use_nb_mhsa:
        raise ConfigurationError("narrow-band MHSA sub-layer is not supported; set use_nb_mhsa=false")
    H, Hp, Hd, g = cfg.H, cfg.H_prime, cfg.H_dprime, cfg.groups
    shapes: dict[str, tuple[int, ...]] = {
        "encoder.weight": (H, 2 * cfg.M, cfg.k),
        "encoder.bias": (H,),
        "shared.fullband.freq_linear.weight": (Hp, cfg.F, cfg.F),
        "shared.fullband.freq_linear.bias": (Hp, cfg.F),
    }
    for b in range(cfg.B):
        p = f"blocks.{b}."
        if cfg.use_gmhsa:
            q = cfg.L * (2 * cfg.E + H // cfg.L)
            shapes.update({
                p + "gmhsa.qkv.weight": (q, H), p + "gmhsa.qkv.bias": (q,),
                p + "gmhsa.proj.weight": (H, H), p + "gmhsa.proj.bias": (H,),
                p + "gmhsa.prelu.slope": (H,),
                p + "gmhsa.norm.gamma": (H,), p + "gmhsa.norm.beta": (H,),
            })
        for conv in ("fconv1", "fconv2"):
            c = p + f"crossband.{conv}."
            shapes.update({
                c + "norm.gamma": (H,), c + "norm.beta": (H,),
                c + "conv.weight": (H, H // g, cfg.k_f), c + "conv.bias": (H,),
                c + "prelu.slope": (H,),
            })
        shapes.update({
            p + "crossband.fullband.down.weight": (Hp, H), p + "crossband.fullband.down.bias": (Hp,),
            p + "crossband.fullband.up.weight": (H, Hp), p + "crossband.fullband.up.bias": (H,),
            p + "narrowband.norm.gamma": (H,), p + "narrowband.norm.beta": (H,),
            p + "narrowband.lin1.weight": (Hd, H), p + "narrowband.lin1.bias": (Hd,),
        })
        for i in (1, 2, 3):
            shapes[p + f"narrowband.tconv{i}.weight"] = (Hd, Hd // g, cfg.k_t)
            shapes[p + f"narrowband.tconv{i}.bias"] = (Hd,)
        shapes.update({
            p + "narrowband.gnorm.gamma": (Hd,), p + "narrowband.gnorm.beta": (Hd,),
            p + "narrowband.lin2.weight": (H, Hd), p + "narrowband.lin2.bias": (H,),
        })
    shapes["output.weight"] = (2 * cfg.C, H)
    shapes["output.bias"] = (2 * cfg.C,)
    return shapes


def init_params(cfg: ModelConfig, rng: np.random.Generator | int = 0) -> dict[str, Tensor]:
    """Uniform fan-in weights, zero biases, unit/zero norm affines, PReLU slopes of 0.25."""
    rng = np.random.default_rng(rng)
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf in ("bias", "beta"):
            data = np.zeros(shape)
        elif leaf == "gamma":
            data = np.ones(shape)
        elif leaf == "slope":
            data = np.full(shape, 0.25)
        else:
            fan_in = int(np.prod(shape[1:])) if "freq_linear" not in name else shape[2]
            bound = 1.0 / math.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = T.parameter(data)
    return params


def count_params(cfg: ModelConfig) -> int:
    """Number of learnable scalars, counting the shared frequency linears once."""
    return int(sum(int(np.prod(s)) for s in param_shapes(cfg).values()))


def module_census(cfg: ModelConfig) -> dict[str, int]:
    """Trainable parameter count per module, keyed ``encoder``, ``blocks.3.gmhsa`` and so on.

    The positional-encoding table is fixed, so it appears as ``rcpe`` with a
    count of zero when enabled and is absent otherwise.
    """
    out: dict[str, int] = {}
    for name, shape in param_shapes(cfg).items():
        parts = name.split(".")
        key = ".".join(parts[:3] if parts[0] == "blocks" else parts[:1])
        out[key] = out.get(key, 0) + int(np.prod(shape))
        if key == "encoder" and cfg.use_rcpe:
            out.setdefault("rcpe", 0)
    return out


def topology(cfg: ModelConfig) -> dict[str, bool]:
    """Which ablation-table components a configuration contains, read off its parameter names."""
    census = module_census(cfg)
    blocks = [k for k in census if k.startswith("blocks.")]
    return {
        "pe": "rcpe" in census,
        "gmhsa": any(k.endswith(".gmhsa") for k in blocks),
        "nb_mhsa": any(k.endswith(".nb_mhsa") for k in blocks),
        "narrow_band": all(f"blocks.{b}.narrowband" in census for b in range(cfg.B)),
        "cross_band": all(f"blocks.{b}.crossband" in census for b in range(cfg.B)),
    }


def sub_params(params: Params, prefix: str) -> dict[str, Tensor]:
    """Entries under ``prefix`` with the prefix stripped."""
    prefix = prefix if prefix.endswith(".") else prefix + "."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def block_params(params: Params, b: int) -> dict[str, Tensor]:
    """Parameters of block ``b`` plus references to the shared full-band linears."""
    out = sub_params(params, f"blocks.{b}")
    out["crossband.fullband.freq_linear.weight"] = params["shared.fullband.freq_linear.weight"]
    out["crossband.fullband.freq_linear.bias"] = params["shared.fullband.freq_linear.bias"]
    return out


# ---------------------------------------------------------------------------
# positional encoding


@dataclass
class PEMatrix:
    """Sinusoidal table ``[T_max, F*H]`` with feature index ``f*H + h``.

    Rows are computed on demand, so the default 60 s table never has to be
    materialized.
    """

    t_max: int
    dim: int

    def rows(self, start: int, count: int) -> np.ndarray:
        if start < 0 or start + count > self.t_max:
            raise ContractError(f"rows {start}..{start + count} outside the table of {self.t_max}")
        t = np.arange(start, start + count, dtype=np.float64)[:, None]
        i2 = np.arange(0, self.dim, 2, dtype=np.float64)[None, :]
        arg = t / np.power(10000.0, i2 / self.dim)
        out = np.empty((count, self.dim))
        out[:, 0::2] = np.sin(arg)
        out[:, 1::2] = np.cos(arg[:, : self.dim // 2])
        return out

    @property
    def table(self) -> np.ndarray:
        return self.rows(0, self.t_max)


def rcpe_build(cfg: ModelConfig) -> PEMatrix:
    return PEMatrix(cfg.T_max, cfg.F * cfg.H)


def rcpe_offset(n_frames: int, t_max: int, mode: str, rng: np.random.Generator | None = None) -> int:
    """Start row of the chunk: uniform over ``[0, t_max - n_frames]`` in training, 0 otherwise."""
    if n_frames > t_max:
        raise ContractError(f"{n_frames} frames exceed T_max={t_max}; raise T_max in the model config")
    if mode == "train":
        rng = rng if rng is not None else np.random.default_rng()
        return int(rng.integers(0, t_max - n_frames + 1))
    if mode != "eval":
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    return 0


def rcpe_select(pe: PEMatrix, n_frames: int, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    tau = rcpe_offset(n_frames, pe.t_max, mode, rng)
    return Tensor(pe.rows(tau, n_frames))


# ---------------------------------------------------------------------------
# modules on channels-last features [F, T, H]


def _check_hft(x: Tensor, cfg: ModelConfig, channels: int | None = None) -> None:
    c = cfg.H if channels is None else channels
    if x.ndim != 3 or x.shape[0] != c or x.shape[1] != cfg.F:
        raise DimensionError(f"expected [{c}, {cfg.F}, T] features, got {x.shape}")


def _encoder(x: Tensor, p: Params, cfg: ModelConfig) -> Tensor:
    # x: [2M, F, T] -> conv along time per frequency -> [F, T, H]
    h = T.grouped_conv1d(T.transpose(x, (1, 0, 2)), p["encoder.weight"], p["encoder.bias"])
    return T.transpose(h, (0, 2, 1))


def _attention(z: Tensor, p: Params, cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """Per-head attention weights ``[L, T, T]`` and values ``[L, T, F*H/L]``."""
    F_, T_, H = z.shape
    L, E = cfg.L, cfg.E
    dv = H // L
    qkv = T.linear(z, p["qkv.weight"], p["qkv.bias"])
    q = T.reshape(qkv[..., : L * E], (F_, T_, L, E))
    k = T.reshape(qkv[..., L * E: 2 * L * E], (F_, T_, L, E))
    v = T.reshape(qkv[..., 2 * L * E:], (F_, T_, L, dv))
    # frequency merged into the feature axis: [L, T, F*E]
    q = T.reshape(T.transpose(q, (2, 1, 0, 3)), (L, T_, F_ * E))
    k = T.reshape(T.transpose(k, (2, 1, 0, 3)), (L, T_, F_ * E))
    v = T.reshape(T.transpose(v, (2, 1, 0, 3)), (L, T_, F_ * dv))
    scores = T.matmul(q, T.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(E * F_))
    return T.softmax(scores, axis=-1), v


def _gmhsa(z: Tensor, p: Params, cfg: ModelConfig) -> Tensor:
    F_, T_, H = z.shape
    attn, v = _attention(z, p, cfg)
    o = T.matmul(attn, v)
    o = T.reshape(T.transpose(T.reshape(o, (cfg.L, T_, F_, H // cfg.L)), (2, 1, 0, 3)), (F_, T_, H))
    o = T.linear(o, p["proj.weight"], p["proj.bias"])
    o = T.layer_norm(T.prelu(o, p["prelu.slope"]), p["norm.gamma"], p["norm.beta"])
    return z + o


def _freq_conv(z: Tensor, p: Params, prefix: str, cfg: ModelConfig) -> Tensor:
    n = T.layer_norm(z, p[prefix + "norm.gamma"], p[prefix + "norm.beta"])
    h = T.grouped_conv1d(T.transpose(n, (1, 2, 0)), p[prefix + "conv.weight"], p[prefix + "conv.bias"],
                         groups=cfg.groups)  # [T, H, F]
    h = T.prelu(h, p[prefix + "prelu.slope"], axis=1)
    return T.transpose(h, (2, 0, 1))


def _full_band(z: Tensor, p: Params) -> Tensor:
    d = T.silu(T.linear(z, p["crossband.fullband.down.weight"], p["crossband.fullband.down.bias"]))
    w = p["crossband.fullband.freq_linear.weight"]  # [H', F_out, F_in]
    b = p["crossband.fullband.freq_linear.bias"]  # [H', F]
    d = T.transpose(d, (2, 1, 0))  # [H', T, F]
    d = T.matmul(d, T.transpose(w, (0, 2, 1))) + T.reshape(b, (b.shape[0], 1, b.shape[1]))
    d = T.transpose(d, (2, 1, 0))
    u = T.silu(T.linear(d, p["crossband.fullband.up.weight"], p["crossband.fullband.up.bias"]))
    return u + z


def _cross_band(z: Tensor, p: Params, cfg: ModelConfig) -> Tensor:
    a = _freq_conv(z, p, "crossband.fconv1.", cfg)
    b = _full_band(a, p)
    c = _freq_conv(b, p, "crossband.fconv2.", cfg)
    return z + c


def _narrow_band(z: Tensor, p: Params, cfg: ModelConfig) -> Tensor:
    n = T.layer_norm(z, p["narrowband.norm.gamma"], p["narrowband.norm.beta"])
    h = T.silu(T.linear(n, p["narrowband.lin1.weight"], p["narrowband.lin1.bias"]))
    h = T.transpose(h, (0, 2, 1))  # [F, H'', T]
    h = T.silu(T.grouped_conv1d(h, p["narrowband.tconv1.weight"], p["narrowband.tconv1.bias"], cfg.groups))
    h = T.grouped_conv1d(h, p["narrowband.tconv2.weight"], p["narrowband.tconv2.bias"], cfg.groups)
    h = T.silu(T.group_norm(h, cfg.groups, p["narrowband.gnorm.gamma"], p["narrowband.gnorm.beta"], channel_axis=1))
    h = T.silu(T.grouped_conv1d(h, p["narrowband.tconv3.weight"], p["narrowband.tconv3.bias"], cfg.groups))
    h = T.linear(T.transpose(h, (0, 2, 1)), p["narrowband.lin2.weight"], p["narrowband.lin2.bias"])
    return z + h


def _block(z: Tensor, p: Params, cfg: ModelConfig) -> Tensor:
    if cfg.use_gmhsa:
        z = _gmhsa(z, sub_params(p, "gmhsa"), cfg)
    z = _cross_band(z, p, cfg)
    return _narrow_band(z, p, cfg)


def _output_ri(z: Tensor, p: Params) -> Tensor:
    y = T.linear(z, p["output.weight"], p["output.bias"])  # [F, T, 2C]
    return T.transpose(y, (2, 0, 1))


def _to_hft(z: Tensor) -> Tensor:
    return T.transpose(z, (2, 0, 1))


def _to_fth(x: Tensor) -> Tensor:
    return T.transpose(x, (1, 2, 0))


# ---------------------------------------------------------------------------
# public module API on [H, F, T]


def encoder_forward(x: Tensor, params: Params, cfg: ModelConfig) -> Tensor:
    """``[2M, F, T]`` stacked RI input -> ``[H, F, T]`` features."""
    _check_hft(x, cfg, 2 * cfg.M)
    return _to_hft(_encoder(x, params, cfg))


def gmhsa_forward(x: Tensor, params: Params, cfg: ModelConfig) -> Tensor:
    """Global multi-head self-attention over frames; ``params`` holds the module's own keys."""
    _check_hft(x, cfg)
    return _to_hft(_gmhsa(_to_fth(x), params, cfg))


def gmhsa_attention(x: Tensor, params: Params, cfg: ModelConfig) -> np.ndarray:
    """Attention weights ``[L, T, T]`` the module would use on ``x``."""
    _check_hft(x, cfg)
    with T.no_grad():
        return _attention(_to_fth(x), params, cfg)[0].data


def cross_band_forward(x: Tensor, params: Params, cfg: ModelConfig) -> Tensor:
    """``params`` uses block-relative keys (see ``block_params``) including the shared linears."""
    _check_hft(x, cfg)
    return _to_hft(_cross_band(_to_fth(x), params, cfg))


def narrow_band_forward(x: Tensor, params: Params, cfg: ModelConfig) -> Tensor:
    _check_hft(x, cfg)
    return _to_hft(_narrow_band(_to_fth(x), params, cfg))


@dataclass
class SeparatedBatch:
    waveforms: np.ndarray  # [C, N]
    spectrograms: list[dsp.Spectrogram]
    estimates: Tensor | None = field(default=None, repr=False)  # [C, N] on the tape


def output_layer_forward(x: Tensor, params: Params, cfg: ModelConfig, norm: dsp.NormalizationState,
                         length: int) -> SeparatedBatch:
    """Pointwise ``H -> 2C`` map, per-speaker iSTFT, rescale by the mixture's sigma."""
    _check_hft(x, cfg)
    ri = _output_ri(_to_fth(x), params)
    return _ri_to_batch(ri, cfg, norm, length)


def _ri_to_batch(ri: Tensor, cfg: ModelConfig, norm: dsp.NormalizationState, length: int) -> SeparatedBatch:
    re, im = ri[0::2], ri[1::2]
    est = dsp.istft_tensor(re, im, length, cfg.frame_len, cfg.hop) * norm.sigma
    specs = dsp.unstack_ri(ri.data, cfg.frame_len, cfg.hop)
    return SeparatedBatch(est.data, specs, est)


# ---------------------------------------------------------------------------
# full network


class CrossNet:
    """Configuration, parameters and the positional-encoding table of one separator."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.params = init_params(cfg, seed) if params is None else params
        expected = param_shapes(cfg)
        for name, shape in expected.items():
            if name not in self.params:
                raise ConfigurationError(f"missing parameter {name}")
            if self.params[name].shape != shape:
                raise DimensionError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")
        extra = set(self.params) - set(expected)
        if extra:
            raise ConfigurationError(f"unexpected parameters: {sorted(extra)}")
        self.pe = rcpe_build(cfg) if cfg.use_rcpe else None

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def features(self, x: Tensor, mode: str = "eval", rng: np.random.Generator | None = None) -> Tensor:
        """Stacked RI ``[2M, F, T]`` -> block output ``[F, T, H]`` (channels last)."""
        _check_hft(x, self.cfg, 2 * self.cfg.M)
        z = _encoder(x, self.params, self.cfg)
        if self.cfg.use_rcpe:
            n_frames = x.shape[2]
            pe = rcpe_select(self.pe, n_frames, mode, rng)
            pe = Tensor(pe.data.reshape(n_frames, self.cfg.F, self.cfg.H).transpose(1, 0, 2))
            z = z + pe
        for b in range(self.cfg.B):
            z = _block(z, block_params(self.params, b), self.cfg)
        return z

    def separate_tensor(self, mixture: np.ndarray, mode: str = "eval",
                        rng: np.random.Generator | None = None) -> tuple[Tensor, dsp.NormalizationState]:
        """``[M, N]`` mixture -> ``[C, N]`` estimates on the tape, plus the normalization used."""
        w = dsp.Waveform(mixture)
        if w.channels != self.cfg.M:
            raise DimensionError(f"mixture has {w.channels} channels, model expects {self.cfg.M}")
        normed, state = dsp.normalize(w, 0)
        spec = dsp.stft(normed, self.cfg.frame_len, self.cfg.hop)
        x = Tensor(dsp.stack_ri(spec))
        ri = _output_ri(self.features(x, mode, rng), self.params)
        re, im = ri[0::2], ri[1::2]
        est = dsp.istft_tensor(re, im, w.length, self.cfg.frame_len, self.cfg.hop) * state.sigma
        return est, state

    def forward(self, mixture: dsp.Waveform | np.ndarray, mode: str = "eval",
                rng: np.random.Generator | None = None) -> SeparatedBatch:
        samples = mixture.samples if isinstance(mixture, dsp.Waveform) else np.asarray(mixture)
        if samples.ndim == 1:
            samples = samples[None]
        w = dsp.Waveform(samples)
        normed, state = dsp.normalize(w, 0)
        x = Tensor(dsp.stack_ri(dsp.stft(normed, self.cfg.frame_len, self.cfg.hop)))
        ri = _output_ri(self.features(x, mode, rng), self.params)
        return _ri_to_batch(ri, self.cfg, state, w.length)

    __call__ = forward


def crossnet_forward(mixture: dsp.Waveform, cfg: ModelConfig, params: dict[str, Tensor], mode: str = "eval",
                     rng: np.random.Generator | None = None) -> SeparatedBatch:
    return CrossNet(cfg, params).forward(mixture, mode, rng)


# ---------------------------------------------------------------------------
# complexity


def flop_breakdown(cfg: ModelConfig, n_samples: int) -> dict[str, dict[str, int]]:
    """Forward-pass FLOPs by module for an ``n_samples`` mixture.

    Each module reports ``matmul`` (linears, convolutions, attention products;
    a multiply-accumulate is 2 FLOPs, biases excluded) and ``elementwise``
    (biases, normalizations, activations, scaling and residual adds, using the
    per-element costs the tensor primitives report to ``FlopCounter``).  The
    STFT and iSTFT are not counted.
    """
    nf = dsp.n_frames(n_samples, cfg.frame_len, cfg.hop)
    F_, H, Hp, Hd, L, E, g = cfg.F, cfg.H, cfg.H_prime, cfg.H_dprime, cfg.L, cfg.E, cfg.groups
    tf = F_ * nf
    silu, norm, prelu = T.SILU_FLOPS, T.NORM_FLOPS, T.PRELU_FLOPS
    out = {
        "encoder": {"matmul": tf * H * 2 * 2 * cfg.M * cfg.k, "elementwise": tf * H},
        "rcpe": {"matmul": 0, "elementwise": tf * H if cfg.use_rcpe else 0},
    }
    gm_mm = gm_ew = 0
    if cfg.use_gmhsa:
        q = L * (2 * E + H // L)
        gm_mm = (tf * q * 2 * H
                 + 2 * L * nf * nf * F_ * E  # query-key scores
                 + 2 * nf * nf * F_ * H  # attention-weighted values
                 + tf * H * 2 * H)
        gm_ew = (tf * q + (1 + T.SOFTMAX_FLOPS) * L * nf * nf
                 + tf * H * (1 + prelu + norm + 1))
    cb_mm = 2 * tf * H * 2 * (H // g) * cfg.k_f + tf * Hp * 2 * H + 2 * Hp * nf * F_ * F_ + tf * H * 2 * Hp
    cb_ew = (2 * tf * H * (norm + 1 + prelu)
             + tf * Hp * (1 + silu) + Hp * nf * F_
             + tf * H * (1 + silu + 1) + tf * H)
    nb_mm = tf * Hd * 2 * H + 3 * tf * Hd * 2 * (Hd // g) * cfg.k_t + tf * H * 2 * Hd
    nb_ew = (tf * H * norm + tf * Hd * (1 + silu) + 3 * tf * Hd * (1 + silu) + tf * Hd * norm
             + tf * H + tf * H)
    out["gmhsa"] = {"matmul": cfg.B * gm_mm, "elementwise": cfg.B * gm_ew}
    out["cross_band"] = {"matmul": cfg.B * cb_mm, "elementwise": cfg.B * cb_ew}
    out["narrow_band"] = {"matmul": cfg.B * nb_mm, "elementwise": cfg.B * nb_ew}
    out["output"] = {"matmul": tf * 2 * cfg.C * 2 * H, "elementwise": tf * 2 * cfg.C + cfg.C * n_samples}
    return out


def count_flops(cfg: ModelConfig, seconds: float = 4.0, sample_rate: int = 8000,
                convention: str = "full") -> int:
    """Total forward FLOPs for a mixture of the given duration.

    ``convention="full"`` counts every primitive; ``"matmul"`` keeps only the
    linear/convolution/attention products, which is what torch's
    ``FlopCounterMode`` reports.
    """
    if convention not in ("full", "matmul"):
        raise ConfigurationError(f"unknown FLOP convention {convention!r}")
    parts = flop_breakdown(cfg, int(round(seconds * sample_rate))).values()
    keys = ("matmul", "elementwise") if convention == "full" else ("matmul",)
    return int(sum(p[k] for p in parts for k in keys))


def gflops_per_second(cfg: ModelConfig, seconds: float = 4.0, sample_rate: int = 8000,
                      convention: str = "full") -> float:
    """GFLOPs per second of audio, averaged over a ``seconds``-long input."""
    return count_flops(cfg, seconds, sample_rate, convention) / seconds / 1e9
