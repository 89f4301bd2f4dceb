"""Acceptance criteria, one test each; every test prints a PASS/FAIL line at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in the
terminal summary under "acceptance criteria".
"""

import json
import time

import numpy as np
import pytest

from conftest import record
from crossnet import cli, datagen, diagnostics, dsp, metrics, model, objective, trainer
from crossnet import tensor as T
from crossnet.errors import ContractError

import oracles


def cli_json(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, _ = capsys.readouterr()
    assert code == 0
    return json.loads(out)


def test_parameter_count():
    n = model.count_params(model.ModelConfig())
    err = abs(n - 6.57e6) / 6.57e6
    assert record("parameter count", err <= 0.10, f"{n} vs 6.57e6 ({err:+.1%}, tolerance 10%)")


def test_flop_count(capsys):
    info = cli_json(capsys, "flops", "--mics", 6, "--seconds", 4, "--json")
    g = info["headline"]
    err = abs(g - 96.3) / 96.3
    ok = record("FLOP count", err <= 0.20,
                f"{g:.2f} GFLOPs/s for 6 mics, 4 s at 8 kHz vs 96.3 ({err:+.1%}, tolerance 20%; "
                f"{info['convention']} convention, full count {info['gflops_per_second']['full']:.2f})")
    assert ok


def test_gradient_suite():
    t0 = time.perf_counter()
    reports = diagnostics.gradient_suite(range(5))
    elapsed = time.perf_counter() - t0
    worst = max(reports, key=lambda r: r.max_rel_error)
    bad = [r.name for r in reports if not r.passed]
    ok = record("gradient suite", not bad and worst.max_rel_error < 1e-4 and elapsed < 120,
                f"{len(reports) - len(bad)}/{len(reports)} checks pass, worst {worst.max_rel_error:.1e} "
                f"({worst.name}) < 1e-4, {elapsed:.1f} s < 120 s")
    assert ok, bad


def test_stft_round_trip():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(3 * dsp.FRAME_LEN, 40 * dsp.FRAME_LEN))
        x = rng.normal(size=n) * rng.uniform(1e-3, 1e3)
        y = dsp.istft(dsp.stft(dsp.Waveform(x)), n).samples[0]
        sl = dsp.cola_interior(n)
        worst = max(worst, np.linalg.norm(y[sl] - x[sl]) / np.linalg.norm(x[sl]))
    assert record("STFT round trip", worst < 1e-6,
                  f"worst relative L2 error {worst:.1e} over 100 signals on the overlap-covered interior (< 1e-6)")


@pytest.mark.parametrize("c", [2, 3])
def test_pit_oracle_equivalence(c):
    rng = np.random.default_rng(c)
    loss_fn = objective.make_loss_fn("mag+sisdr", 16, 8)
    scalar = lambda e, r: sum(v.item() for v in loss_fn(T.Tensor(e), r))
    mismatches = 0
    for _ in range(100):
        ref = rng.normal(size=(c, 64))
        est = ref[rng.permutation(c)] + rng.normal(size=(c, 64)) * rng.uniform(0.1, 3.0)
        got = objective.pit_loss(T.Tensor(est), ref, loss_fn)
        val, perm = oracles.brute_force_pit(est, ref, scalar)
        mismatches += not (got.total.item() == val and got.permutation == perm)
    assert record(f"PIT oracle equivalence C={c}", mismatches == 0,
                  f"{100 - mismatches}/100 instances equal the exhaustive minimum exactly")


# overfit sanity -------------------------------------------------------------

OVERFIT_MODEL = dict(F=65, H=32, H_prime=8, H_dprime=64, B=2, L=4, T_max=61)
OVERFIT_TRAIN = dict(max_epochs=10**6, max_steps=500, batch_size=1, crop_seconds=None, loss="sisdr",
                     sisdr_numerator="projection", fixed_lr=2e-2, grad_clip=5.0, early_stop_patience=10**6, seed=0)


def overfit_scenes():
    utts = []
    for i in range(4):
        spec = datagen.SceneSpec.sample(i, C=2, M=1, duration=0.5, anechoic=True, noise=False)
        m, refs, _ = datagen.mix(spec)
        utts.append(datagen.Utterance(f"scene{i}", m.samples, refs[:, 0]))
    return utts


def mean_si_sdr_i(net, utts):
    return float(np.mean([metrics.evaluate(net(u.mixture).waveforms, u.refs, u.mixture[0]).mean("si_sdr_i")
                          for u in utts]))


def test_overfit_sanity():
    utts = overfit_scenes()
    cfg = model.ModelConfig(**OVERFIT_MODEL)
    assert max(dsp.n_frames(u.mixture.shape[1], cfg.frame_len, cfg.hop) for u in utts) <= cfg.T_max
    net = model.CrossNet(cfg, seed=0)
    before = mean_si_sdr_i(net, utts)
    t0 = time.perf_counter()
    res = trainer.fit(net, utts, None, trainer.TrainConfig(**OVERFIT_TRAIN))
    elapsed = time.perf_counter() - t0
    after = mean_si_sdr_i(net, utts)
    ok = record("overfit sanity", after >= 10.0 and elapsed <= 900 and res.log[-1]["step"] == 500,
                f"training-set SI-SDRi {before:.1f} -> {after:.1f} dB after {res.log[-1]['step']} Adam steps "
                f"(>= 10 dB) in {elapsed:.0f} s (<= 900 s)")
    assert ok


# length robustness ------------------------------------------------------------

def test_length_robustness():
    cfg = model.tiny_config(T_max=64)
    net = model.CrossNet(cfg, seed=1)
    rng = np.random.default_rng(0)
    problems = []
    for t in (1, 2, 3, 5, 8, 13, 21, 34, 55, 63, 64):
        n = dsp.n_samples_for_frames(t, cfg.frame_len, cfg.hop) + int(rng.integers(0, cfg.hop))
        out = net(rng.normal(size=(cfg.M, n))).waveforms
        if out.shape != (cfg.C, n) or not np.all(np.isfinite(out)):
            problems.append(t)
    pe = net.pe
    prefix = all(np.array_equal(model.rcpe_select(pe, t1, "eval").data, model.rcpe_select(pe, t2, "eval").data[:t1])
                 for t1 in range(1, 65, 7) for t2 in range(t1 + 1, 65, 5))
    with pytest.raises(ContractError):
        net(rng.normal(size=(cfg.M, dsp.n_samples_for_frames(65, cfg.frame_len, cfg.hop))))
    ok = record("length robustness", not problems and prefix,
                f"finite [C, N] outputs for T in 1..T_max={cfg.T_max} (failures: {problems or 'none'}); "
                f"eval PE slices are exact prefixes: {prefix}")
    assert ok


def test_ablation_topology(capsys):
    info = cli_json(capsys, "inspect", "--ablation", "no-rcpe", "--ablation", "no-gmhsa", "--json")
    full = cli_json(capsys, "inspect", "--json")
    names = list(model.param_shapes(model.ModelConfig.from_dict(info["config"])))
    census = info["census"]
    row1 = (not info["topology"]["pe"] and not info["topology"]["gmhsa"] and info["topology"]["narrow_band"]
            and info["topology"]["cross_band"] and not any("gmhsa" in n for n in names) and "rcpe" not in census
            and all(f"blocks.{b}.narrowband" in census for b in range(info["config"]["B"])))
    default = full["topology"]["pe"] and full["topology"]["gmhsa"] and not full["topology"]["nb_mhsa"]
    ok = record("ablation topology", row1 and default,
                f"no-rcpe+no-gmhsa census: PE={info['topology']['pe']}, GMHSA={info['topology']['gmhsa']}, "
                f"narrow-band in all {info['config']['B']} blocks={info['topology']['narrow_band']}, "
                f"{info['params']} params vs {full['params']} default")
    assert ok


def test_determinism(tmp_path, capsys):
    def pipeline(root):
        steps = [
            ["gen-data", "--out", root / "data", "--count", 2, "--duration", 0.5, "--seed", 11],
            ["train", root / "data" / "manifest.json", "--preset", "small", "--out", root / "run",
             "--steps", 50, "--patience", 1000, "--batch-size", 1, "--crop", 0.3, "--seed", 11,
             "--sisdr-numerator", "projection"],
            ["eval", root / "data" / "manifest.json", root / "run" / "model.xnet", "--out", root / "eval"],
        ]
        for argv in steps:
            assert cli.main([str(a) for a in argv]) == 0
        capsys.readouterr()
        return {name: (root / name).read_bytes()
                for name in ("run/train_log.jsonl", "eval/metrics.jsonl", "run/model.xnet", "data/manifest.json")}

    a, b = pipeline(tmp_path / "a"), pipeline(tmp_path / "b")
    same = [k for k in a if a[k] == b[k]]
    steps = json.loads(a["run/train_log.jsonl"].splitlines()[-1])["step"]
    ok = record("determinism", len(same) == len(a) and steps == 50,
                f"two seeded gen-data -> train ({steps} steps) -> eval runs: {len(same)}/{len(a)} artifacts "
                f"byte-identical (log, metrics, checkpoint, manifest)")
    assert ok
