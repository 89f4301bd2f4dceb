"""Adam, the warm-up then reduce-on-plateau learning-rate schedule, the epoch
loop with random crops and early stopping, and the binary checkpoint format.

Checkpoint layout (all integers little-endian)::

    "XNET" | u32 version=1 | u64 config_hash | u32 tensor_count
    per tensor: u16 name_len | UTF-8 name | u8 dtype (0 = f64) | u8 ndim | u64 dims[ndim] | f64 data

Optimizer moments and scalar schedule/loop state are stored as ordinary named
tensors under the ``adam.`` and ``state.`` prefixes.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import objective
from . import tensor as T
from .datagen import Utterance
from .errors import ConfigurationError, ContractError, FormatError, TrainingError
from .model import CrossNet
from .tensor import Tensor

MAGIC = b"XNET"
CHECKPOINT_VERSION = 1
DTYPE_F64 = 0
LR_MIN, LR_MAX = 1e-6, 1e-3


# ---------------------------------------------------------------------------
# Adam


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: Mapping[str, Tensor], state: OptimizerState, lr: float) -> None:
    """Bias-corrected Adam update of every parameter in place."""
    missing = [k for k, p in params.items() if p.grad is None]
    if missing:
        raise ContractError(f"no gradient for {len(missing)} parameter(s), e.g. {missing[0]}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1 - b1 ** state.step, 1 - b2 ** state.step
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# learning-rate schedule


@dataclass
class ScheduleState:
    phase: str = "warmup"
    epoch: int = 0
    best: float = math.inf
    bad_epochs: int = 0
    lr: float = LR_MIN
    warmup_epochs: int = 10
    patience: int = 3
    factor: float = 0.9
    threshold: float = 1e-6


def warmup_lr(epoch: float, warmup_epochs: int = 10, lo: float = LR_MIN, hi: float = LR_MAX) -> float:
    """Half-cosine ramp from ``lo`` at epoch 0 to ``hi`` at ``warmup_epochs``."""
    e = min(max(epoch, 0.0), warmup_epochs)
    return lo + (hi - lo) * (1 - math.cos(math.pi * e / warmup_epochs)) / 2


def improved(value: float, best: float, threshold: float = 1e-6) -> bool:
    """Strict relative decrease by at least ``threshold``."""
    if not math.isfinite(best):
        return math.isfinite(value)
    return value < best - threshold * abs(best)


def lr_schedule(state: ScheduleState, epoch: int, validation_loss: float | None = None) -> float:
    """Learning rate for ``epoch`` given the validation loss of the epoch before it.

    Epochs ``0..warmup_epochs`` follow the cosine ramp.  Afterwards every
    validation loss that fails to improve on the best so far counts as a bad
    epoch; after ``patience`` of them the rate is multiplied by ``factor`` and
    the count restarts.
    """
    if epoch < state.epoch:
        raise ContractError(f"schedule epochs must not go backwards ({epoch} < {state.epoch})")
    state.epoch = epoch
    better = validation_loss is not None and improved(validation_loss, state.best, state.threshold)
    if better:
        state.best = validation_loss
    if epoch <= state.warmup_epochs:
        state.lr = warmup_lr(epoch, state.warmup_epochs)
        return state.lr
    if state.phase == "warmup":
        state.phase = "plateau"
        state.lr = LR_MAX
    if validation_loss is not None:
        if better:
            state.bad_epochs = 0
        else:
            state.bad_epochs += 1
            if state.bad_epochs >= state.patience:
                state.lr *= state.factor
                state.bad_epochs = 0
    return state.lr


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    config_hash: int
    tensors: dict[str, np.ndarray]

    @classmethod
    def from_training(cls, config_hash: int, params: Mapping[str, Tensor], opt: OptimizerState | None = None,
                      sched: ScheduleState | None = None, extra: Mapping[str, float] | None = None) -> "Checkpoint":
        tensors = {k: np.array(p.data, dtype=np.float64) for k, p in params.items()}
        if opt is not None:
            tensors["state.adam.step"] = np.array(float(opt.step))
            for k in opt.m:
                tensors["adam.m." + k] = opt.m[k].copy()
                tensors["adam.v." + k] = opt.v[k].copy()
        if sched is not None:
            tensors["state.schedule.epoch"] = np.array(float(sched.epoch))
            tensors["state.schedule.best"] = np.array(sched.best)
            tensors["state.schedule.bad_epochs"] = np.array(float(sched.bad_epochs))
            tensors["state.schedule.lr"] = np.array(sched.lr)
            tensors["state.schedule.plateau"] = np.array(float(sched.phase == "plateau"))
        for k, v in (extra or {}).items():
            tensors["state." + k] = np.array(float(v))
        return cls(config_hash, tensors)

    def params(self) -> dict[str, Tensor]:
        return {k: T.parameter(v.copy()) for k, v in self.tensors.items()
                if not k.startswith(("adam.", "state."))}

    def optimizer(self) -> OptimizerState:
        st = OptimizerState(step=int(self.tensors.get("state.adam.step", 0)))
        for k, v in self.tensors.items():
            if k.startswith("adam.m."):
                st.m[k[7:]] = v.copy()
            elif k.startswith("adam.v."):
                st.v[k[7:]] = v.copy()
        return st

    def schedule(self, template: ScheduleState | None = None) -> ScheduleState:
        s = ScheduleState(**asdict(template)) if template else ScheduleState()
        t = self.tensors
        if "state.schedule.epoch" in t:
            s.epoch = int(t["state.schedule.epoch"])
            s.best = float(t["state.schedule.best"])
            s.bad_epochs = int(t["state.schedule.bad_epochs"])
            s.lr = float(t["state.schedule.lr"])
            s.phase = "plateau" if t["state.schedule.plateau"] else "warmup"
        return s

    def scalar(self, name: str, default: float = 0.0) -> float:
        v = self.tensors.get("state." + name)
        return default if v is None else float(v)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQI", CHECKPOINT_VERSION, ckpt.config_hash, len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", DTYPE_F64, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def checkpoint_save(path: str | Path, ckpt: Checkpoint) -> None:
    try:
        Path(path).write_bytes(checkpoint_bytes(ckpt))
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated while reading {what}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def checkpoint_parse(data: bytes, expected_hash: int | None = None, path: str = "<bytes>") -> Checkpoint:
    r = _Reader(data, path)
    if r.take(4, "magic") != MAGIC:
        raise FormatError(f"{path}: bad magic (not a checkpoint)")
    (version,) = r.unpack("<I", "version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    (cfg_hash,) = r.unpack("<Q", "config_hash")
    if expected_hash is not None and cfg_hash != expected_hash:
        raise FormatError(f"{path}: config_hash {cfg_hash:#018x} does not match the model config "
                          f"({expected_hash:#018x})")
    (count,) = r.unpack("<I", "tensor_count")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = r.unpack("<H", f"name_len of tensor {i}")
        try:
            name = r.take(name_len, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: name of tensor {i} is not UTF-8") from exc
        dtype, ndim = r.unpack("<BB", f"dtype/ndim of {name}")
        if dtype != DTYPE_F64:
            raise FormatError(f"{path}: dtype {dtype} of {name} is not supported")
        dims = r.unpack(f"<{ndim}Q", f"dims of {name}")
        size = int(np.prod(dims, dtype=np.int64))
        raw = r.take(8 * size, f"data of {name}")
        if name in tensors:
            raise FormatError(f"{path}: duplicate tensor name {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
    if r.pos != len(data):
        raise FormatError(f"{path}: {len(data) - r.pos} trailing bytes after tensor_count={count} tensors")
    return Checkpoint(cfg_hash, tensors)


def checkpoint_load(path: str | Path, expected_hash: int | None = None) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    return checkpoint_parse(data, expected_hash, str(path))


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    max_epochs: int = 100
    batch_size: int = 1
    crop_seconds: float | None = 4.0  # None trains on whole utterances
    sample_rate: int = 8000
    loss: str = "mag+sisdr"
    sisdr_numerator: str = "reference"  # "projection" for the scale-invariant form
    fixed_lr: float | None = None  # bypasses the schedule
    max_steps: int | None = None
    early_stop_patience: int = 10
    warmup_epochs: int = 10
    plateau_patience: int = 3
    plateau_factor: float = 0.9
    threshold: float = 1e-6
    grad_clip: float | None = None
    seed: int = 0

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown trainer config keys: {unknown}")
        return cls(**dict(data))


@dataclass
class TrainResult:
    log: list[dict]
    best_params: dict[str, np.ndarray]
    best_loss: float
    checkpoint: Checkpoint
    stopped_early: bool


def crop(utt: Utterance, length: int | None, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random ``length``-sample window; shorter utterances are zero-padded at the tail."""
    n = utt.mixture.shape[1]
    if length is None:
        return utt.mixture, utt.refs
    if n >= length:
        s = int(rng.integers(0, n - length + 1))
        return utt.mixture[:, s:s + length], utt.refs[:, s:s + length]
    pad = ((0, 0), (0, length - n))
    return np.pad(utt.mixture, pad), np.pad(utt.refs, pad)


def _clip(params: Mapping[str, Tensor], max_norm: float) -> None:
    total = math.sqrt(sum(float(np.sum(p.grad ** 2)) for p in params.values()))
    if total > max_norm:
        for p in params.values():
            p.grad = p.grad * (max_norm / total)


def batch_loss(net: CrossNet, batch: Sequence[tuple[np.ndarray, np.ndarray]], loss_fn, mode: str,
               rng: np.random.Generator | None, grad: bool) -> float:
    """Mean PIT loss of a batch; with ``grad`` the parameter gradients are accumulated."""
    total = 0.0
    for mixture, refs in batch:
        if grad:
            est, _ = net.separate_tensor(mixture, mode, rng)
            out = objective.pit_loss(est, refs, loss_fn)
            T.backward(out.total * (1.0 / len(batch)))
        else:
            with T.no_grad():
                est, _ = net.separate_tensor(mixture, mode, rng)
                out = objective.pit_loss(est, refs, loss_fn)
        total += out.total.item()
    return total / len(batch)


def evaluate_loss(net: CrossNet, data: Sequence[Utterance], loss_fn) -> float:
    return batch_loss(net, [(u.mixture, u.refs) for u in data], loss_fn, "eval", None, grad=False)


def fit(net: CrossNet, train_set: Sequence[Utterance], valid_set: Sequence[Utterance] | None,
        cfg: TrainConfig, log_path: str | Path | None = None, checkpoint_path: str | Path | None = None,
        resume: Checkpoint | None = None) -> TrainResult:
    """Train ``net`` in place.

    Each epoch draws a fresh crop of every training utterance, shuffles, and
    takes one Adam step per batch.  Validation (whole utterances, eval mode)
    follows every epoch; without a validation set the mean training loss is
    used for scheduling and early stopping.  Randomness for epoch ``e`` comes
    from a generator seeded with ``(seed, e)`` so a run resumed at an epoch
    boundary replays exactly.
    """
    if not train_set:
        raise ContractError("training set is empty")
    if valid_set is not None and not valid_set:
        raise ContractError("validation set is empty")
    if cfg.batch_size < 1:
        raise ConfigurationError("batch_size must be positive")
    mc = net.cfg
    loss_fn = objective.make_loss_fn(cfg.loss, mc.frame_len, mc.hop, numerator=cfg.sisdr_numerator)
    crop_len = None if cfg.crop_seconds is None else int(round(cfg.crop_seconds * cfg.sample_rate))
    template = ScheduleState(warmup_epochs=cfg.warmup_epochs, patience=cfg.plateau_patience,
                             factor=cfg.plateau_factor, threshold=cfg.threshold)
    cfg_hash = mc.hash()
    if resume is not None:
        if resume.config_hash != cfg_hash:
            raise FormatError("config_hash of the resume checkpoint does not match the model config")
        for k, p in resume.params().items():
            net.params[k].data = p.data
        opt, sched = resume.optimizer(), resume.schedule(template)
        start_epoch = int(resume.scalar("train.next_epoch"))
        step = int(resume.scalar("train.step"))
        best = resume.scalar("train.best", math.inf)
        since_best = int(resume.scalar("train.since_best"))
        pending = resume.scalar("train.pending_valid", math.nan)
        pending = None if math.isnan(pending) else pending
    else:
        opt, sched = OptimizerState(), template
        start_epoch, step, best, since_best, pending = 0, 0, math.inf, 0, None
    best_params = {k: p.data.copy() for k, p in net.params.items()}
    log: list[dict] = []
    log_fh = open(log_path, "a" if resume is not None else "w") if log_path else None
    stopped_early = False
    last_ckpt = None
    try:
        for epoch in range(start_epoch, cfg.max_epochs):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            lr = cfg.fixed_lr if cfg.fixed_lr is not None else lr_schedule(sched, epoch, pending)
            rng = np.random.default_rng([cfg.seed, epoch])
            order = rng.permutation(len(train_set))
            crops = [crop(train_set[i], crop_len, rng) for i in order]
            losses = []
            for b0 in range(0, len(crops), cfg.batch_size):
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
                net.zero_grad()
                loss = batch_loss(net, crops[b0:b0 + cfg.batch_size], loss_fn, "train", rng, grad=True)
                if not math.isfinite(loss):
                    raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, batch {b0 // cfg.batch_size}, "
                                        f"lr {lr:g}")
                if cfg.grad_clip is not None:
                    _clip(net.params, cfg.grad_clip)
                adam_step(net.params, opt, lr)
                step += 1
                losses.append(loss)
            train_loss = float(np.mean(losses)) if losses else math.nan
            valid_loss = evaluate_loss(net, valid_set, loss_fn) if valid_set is not None else None
            score = valid_loss if valid_loss is not None else train_loss
            pending = score
            if improved(score, best, cfg.threshold):
                best, since_best = score, 0
                best_params = {k: p.data.copy() for k, p in net.params.items()}
            else:
                since_best += 1
            rec = {"epoch": epoch, "step": step, "lr": lr, "train_loss": train_loss, "valid_loss": valid_loss}
            log.append(rec)
            if log_fh:
                log_fh.write(json.dumps(rec) + "\n")
                log_fh.flush()
            extra = {"train.next_epoch": epoch + 1, "train.step": step, "train.best": best,
                     "train.since_best": since_best, "train.pending_valid": pending}
            last_ckpt = Checkpoint.from_training(cfg_hash, net.params, opt, sched, extra)
            if checkpoint_path is not None:
                checkpoint_save(Path(checkpoint_path).with_suffix(".last.xnet"), last_ckpt)
                if since_best == 0:
                    best_ckpt = Checkpoint(cfg_hash, {k: v for k, v in last_ckpt.tensors.items()})
                    checkpoint_save(checkpoint_path, best_ckpt)
            if since_best >= cfg.early_stop_patience:
                stopped_early = True
                break
    finally:
        if log_fh:
            log_fh.close()
    if last_ckpt is None:
        last_ckpt = Checkpoint.from_training(cfg_hash, net.params, opt, sched)
    return TrainResult(log, best_params, best, last_ckpt, stopped_early)
