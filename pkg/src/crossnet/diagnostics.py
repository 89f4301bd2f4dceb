"""Finite-difference gradient suite over every primitive and every network module."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from . import dsp, model, objective
from . import tensor as T
from .tensor import GradCheckReport, Tensor

TOL = 1e-4


def _probe(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    """Random linear read-out turning a tensor into a scalar."""
    w = Tensor(rng.normal(size=out.shape))
    return lambda y: T.tsum(y * w)


def _check(name: str, fn: Callable[[], Tensor], inputs, rng, max_entries: int | None = 12) -> GradCheckReport:
    return T.grad_check(fn, inputs, tol=TOL, max_entries=max_entries, rng=rng, name=name)


def _scalar(name, f, inputs, rng, max_entries=12):
    with T.no_grad():
        read = _probe(f(), rng)
    return _check(name, lambda: read(f()), inputs, rng, max_entries)


def primitive_checks(seed: int) -> list[GradCheckReport]:
    rng = np.random.default_rng(seed)
    p = lambda *shape: T.parameter(rng.normal(size=shape))
    pos = lambda *shape: T.parameter(rng.uniform(0.5, 2.0, size=shape))
    a, b, c = p(3, 4), p(3, 4), pos(3, 4)
    x3, w, bias = p(2, 5, 6), p(4, 6), p(4)
    cx, cw, cb = p(3, 8, 7), p(4, 2, 3), p(4)
    ln_g, ln_b = p(6), p(6)
    gn_x, gn_g, gn_b = p(2, 8, 5), p(8), p(8)
    slope = p(6)
    m1, m2 = p(2, 3, 4), p(2, 4, 5)
    re, im = p(4, 5), p(4, 5)
    sig = p(40)
    spec_re, spec_im = p(9, 4), p(9, 4)
    out = [
        _scalar("add/sub/mul/div", lambda: (a + b) * a - b / c, [a, b, c], rng),
        _scalar("exp/log/sqrt/pow", lambda: T.exp(a * 0.3) + T.log(c) + T.sqrt(c) + T.power(c, 1.7), [a, c], rng),
        _scalar("abs/neg", lambda: T.tabs(a) - b, [a, b], rng),
        _scalar("sum/mean", lambda: T.tsum(a * b, axis=1) + T.mean(a, axis=1), [a, b], rng),
        _scalar("reshape/transpose/getitem", lambda: T.transpose(T.reshape(a, (2, 6)), (1, 0))[1:4] * 2.0, [a], rng),
        _scalar("concat/stack", lambda: T.stack([T.concat([a, b], 1), T.concat([b, a], 1)], 0), [a, b], rng),
        _scalar("matmul", lambda: T.matmul(m1, m2), [m1, m2], rng),
        _scalar("linear", lambda: T.linear(x3, w, bias), [x3, w, bias], rng),
        _scalar("grouped_conv1d", lambda: T.grouped_conv1d(cx, cw, cb, groups=4), [cx, cw, cb], rng),
        _scalar("layer_norm", lambda: T.layer_norm(x3, ln_g, ln_b), [x3, ln_g, ln_b], rng),
        _scalar("group_norm", lambda: T.group_norm(gn_x, 4, gn_g, gn_b, channel_axis=1), [gn_x, gn_g, gn_b], rng),
        _scalar("silu/sigmoid", lambda: T.silu(x3) + T.sigmoid(x3), [x3], rng),
        _scalar("prelu", lambda: T.prelu(x3, slope), [x3, slope], rng),
        _scalar("softmax", lambda: T.softmax(x3 * 2.0, axis=-1), [x3], rng),
        _scalar("complex_abs", lambda: T.complex_abs(re, im), [re, im], rng),
        _scalar("stft", lambda: T.concat(list(dsp.stft_tensor(sig, 16, 8)), 0), [sig], rng),
        _scalar("istft", lambda: dsp.istft_tensor(spec_re, spec_im, 40, 16, 8), [spec_re, spec_im], rng),
    ]
    return out


def module_checks(seed: int, cfg: model.ModelConfig | None = None, n_frames: int = 6) -> list[GradCheckReport]:
    cfg = cfg or model.tiny_config()
    rng = np.random.default_rng(seed)
    params = model.init_params(cfg, seed)
    for t in params.values():
        t.data = t.data + 0.1 * rng.normal(size=t.shape)
    bp = model.block_params(params, 0)
    gm = model.sub_params(params, "blocks.0.gmhsa")
    x_in = T.parameter(rng.normal(size=(2 * cfg.M, cfg.F, n_frames)))
    h = T.parameter(rng.normal(size=(cfg.H, cfg.F, n_frames)))
    n = dsp.n_samples_for_frames(n_frames, cfg.frame_len, cfg.hop)
    norm = dsp.NormalizationState(1.7)

    def pick(d, *names):
        return [h] + [d[k] for k in names]

    reports = [
        _scalar("encoder", lambda: model.encoder_forward(x_in, params, cfg),
                [x_in, params["encoder.weight"], params["encoder.bias"]], rng),
        _scalar("gmhsa", lambda: model.gmhsa_forward(h, gm, cfg),
                pick(gm, "qkv.weight", "qkv.bias", "proj.weight", "prelu.slope", "norm.gamma"), rng),
        _scalar("cross_band", lambda: model.cross_band_forward(h, bp, cfg),
                pick(bp, "crossband.fconv1.conv.weight", "crossband.fconv1.norm.gamma", "crossband.fconv2.prelu.slope",
                     "crossband.fullband.down.weight", "crossband.fullband.freq_linear.weight",
                     "crossband.fullband.freq_linear.bias", "crossband.fullband.up.weight"), rng),
        _scalar("narrow_band", lambda: model.narrow_band_forward(h, bp, cfg),
                pick(bp, "narrowband.norm.gamma", "narrowband.lin1.weight", "narrowband.tconv1.weight",
                     "narrowband.tconv2.bias", "narrowband.gnorm.gamma", "narrowband.tconv3.weight",
                     "narrowband.lin2.weight"), rng),
        _scalar("output", lambda: model.output_layer_forward(h, params, cfg, norm, n).estimates,
                [h, params["output.weight"], params["output.bias"]], rng),
    ]
    est = T.parameter(rng.normal(size=(cfg.C, n)))
    ref = rng.normal(size=(cfg.C, n))
    fn = objective.make_loss_fn("mag+sisdr", cfg.frame_len, cfg.hop)
    reports.append(_check("combined loss", lambda: objective.pit_loss(est, ref, fn).total, [est], rng, None))

    net = model.CrossNet(cfg, params)
    mix = rng.normal(size=(cfg.M, n))
    target = rng.normal(size=(cfg.C, n))

    def full():
        y, _ = net.separate_tensor(mix, "eval")
        return objective.pit_loss(y, target, fn).total

    names = ["encoder.weight", "shared.fullband.freq_linear.weight", "output.weight"]
    names += [k for k in params if k.startswith(f"blocks.{cfg.B - 1}.") and k.endswith("weight")][:4]
    reports.append(_check("full model", full, [params[k] for k in names], rng, 4))
    return reports


def gradient_suite(seeds: Iterable[int] = range(5)) -> list[GradCheckReport]:
    """Every primitive and module check, once per seed."""
    out = []
    for s in seeds:
        for r in primitive_checks(s) + module_checks(s):
            r.name = f"{r.name} [seed {s}]"
            out.append(r)
    return out
