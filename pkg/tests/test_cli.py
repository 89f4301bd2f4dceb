import json

import numpy as np
import pytest

from crossnet import cli, dsp, metrics, model


def call(*argv):
    return cli.main([str(a) for a in argv])


def run(capsys, *argv):
    code = call(*argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert call("gen-data", "--out", root / "data", "--count", 2, "--duration", 0.5, "--seed", 3) == 0
    assert call("train", root / "data" / "manifest.json", "--preset", "small", "--out", root / "run",
                "--steps", 2, "--batch-size", 2, "--crop", 0.25) == 0
    return root


def test_seed_printed(capsys):
    code, _, err = run(capsys, "flops", "--seed", 17)
    assert code == 0 and "root seed 17" in err


def test_flops_six_mics(capsys):
    code, out, _ = run(capsys, "flops", "--mics", 6, "--json")
    info = json.loads(out)
    assert code == 0 and info["mics"] == 6
    assert info["headline"] == pytest.approx(info["gflops_per_second"]["matmul"])
    assert info["gflops_per_second"]["full"] > info["gflops_per_second"]["matmul"]
    cfg = model.ModelConfig(M=6)
    assert info["headline"] == pytest.approx(model.gflops_per_second(cfg, convention="matmul"))


def test_flops_table(capsys):
    code, out, _ = run(capsys, "flops", "--preset", "tiny", "--seconds", 1)
    assert code == 0
    for name in ("encoder", "gmhsa", "cross_band", "narrow_band", "output", "headline"):
        assert name in out


def test_inspect_ablation_topology(capsys):
    code, out, _ = run(capsys, "inspect", "--ablation", "no-rcpe", "--ablation", "no-gmhsa", "--json")
    info = json.loads(out)
    assert code == 0
    assert info["topology"] == {"pe": False, "gmhsa": False, "nb_mhsa": False, "narrow_band": True,
                                "cross_band": True}
    assert not any("gmhsa" in k or k == "rcpe" for k in info["census"])
    assert info["params"] == sum(info["census"].values())


def test_config_file_then_flags(tmp_path, capsys):
    path = tmp_path / "run.json"
    cli.RunConfig(seed=4, preset="tiny", model={"B": 1}).to_json(path)
    code, out, err = run(capsys, "inspect", "--config", path, "--json")
    assert code == 0 and "root seed 4" in err
    assert json.loads(out)["config"]["B"] == 1
    code, _, err = run(capsys, "inspect", "--config", path, "--seed", 9)
    assert code == 0 and "root seed 9" in err


def test_run_config_round_trip(tmp_path):
    rc = cli.RunConfig(seed=2, preset="small", model={"M": 2}, train={"max_steps": 5}, ablation=["no-rcpe"])
    rc.to_json(tmp_path / "a.json")
    back = cli.RunConfig.from_json(tmp_path / "a.json")
    assert back == rc and back.hash() == rc.hash()
    assert back.model_config().use_rcpe is False
    assert back.train_config().seed == 2


def test_unknown_config_key_is_runtime_error(tmp_path, capsys):
    (tmp_path / "bad.json").write_text(json.dumps({"seed": 1, "colour": "red"}))
    code, _, err = run(capsys, "inspect", "--config", tmp_path / "bad.json")
    assert code == 2 and "colour" in err


def test_usage_errors_exit_one(capsys):
    assert run(capsys, "flops", "--bogus")[0] == 1
    assert run(capsys, "no-such-command")[0] == 1
    assert run(capsys)[0] == 1
    code, _, err = run(capsys, "flops", "--ablation", "no-encoder")
    assert code == 1 and "usage" in err


def test_help_exits_zero(capsys):
    assert run(capsys, "--help")[0] == 0


def test_train_outputs(workspace):
    ckpt = workspace / "run" / "model.xnet"
    assert ckpt.exists() and (workspace / "run" / "model.last.xnet").exists()
    side = cli.RunConfig.from_json(cli.sidecar(ckpt))
    assert side.model["M"] == 1 and side.model["C"] == 2
    log = [json.loads(x) for x in (workspace / "run" / "train_log.jsonl").read_text().splitlines()]
    assert log[-1]["step"] == 2
    assert set(log[0]) == {"epoch", "step", "lr", "train_loss", "valid_loss"}


def test_separate_writes_one_file_per_speaker(workspace, capsys):
    mix = workspace / "data" / "scene00000_mix.wav"
    out = workspace / "sep"
    code, stdout, _ = run(capsys, "separate", mix, "-o", out, "--checkpoint", workspace / "run" / "model.xnet")
    assert code == 0
    files = sorted(out.glob("*.wav"))
    assert len(files) == 2 and len(stdout.split()) == 2
    n = dsp.read_wav(mix).length
    for f in files:
        w = dsp.read_wav(f)
        assert w.length == n and w.channels == 1


def test_eval_summary_is_mean_of_records(workspace, capsys):
    out = workspace / "eval"
    code, stdout, _ = run(capsys, "eval", workspace / "data" / "manifest.json", workspace / "run" / "model.xnet",
                          "--out", out)
    assert code == 0 and "si_sdr_i" in stdout
    records = metrics.read_jsonl(out / "metrics.jsonl")
    summary = json.loads((out / "summary.json").read_text())
    assert len(records) == summary["utterances"] == 2
    for key in metrics.SUMMARY_KEYS:
        assert summary[key] == pytest.approx(np.mean([r[key] for r in records]), abs=1e-12)


def test_eval_config_mismatch_is_runtime_error(workspace, capsys):
    code, _, err = run(capsys, "eval", workspace / "data" / "manifest.json", workspace / "run" / "model.xnet",
                       "--preset", "tiny", "--out", workspace / "e2")
    assert code == 2 and "config_hash" in err


def test_eval_requires_checkpoint(workspace, capsys):
    assert run(capsys, "eval", workspace / "data" / "manifest.json")[0] == 1


def test_missing_input_is_runtime_error(tmp_path, capsys):
    assert run(capsys, "separate", tmp_path / "nope.wav", "-o", tmp_path)[0] == 2


def test_inspect_checkpoint(workspace, capsys):
    code, out, _ = run(capsys, "inspect", workspace / "run" / "model.xnet", "--json")
    info = json.loads(out)
    assert code == 0 and info["checkpoint"]["matches_config"]
    ck = info["checkpoint"]
    assert ck["tensor_count"] == len(ck["tensors"]) and "encoder.weight" in ck["tensors"]


def test_gradcheck_single_seed(capsys):
    code, out, _ = run(capsys, "gradcheck", "--seeds", 1)
    assert code == 0 and "24/24 checks passed" in out


def test_gen_data_deterministic(tmp_path, capsys):
    for d in ("a", "b"):
        assert run(capsys, "gen-data", "--out", tmp_path / d, "--count", 1, "--duration", 0.5, "--seed", 8)[0] == 0
    for name in ("scene00000_mix.wav", "scene00000_s1.wav", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
