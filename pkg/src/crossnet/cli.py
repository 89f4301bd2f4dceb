"""Command-line entry point: ``crossnet <subcommand> [options]``.

Settings are resolved in three layers: a named preset, then an optional
``--config`` JSON file, then command-line flags (flags win).  Every run starts
from one root seed, printed on stderr at startup.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

from . import datagen, diagnostics, dsp, metrics, model, trainer
from .errors import ConfigurationError, CrossNetError

ABLATIONS = {"no-rcpe": "use_rcpe", "no-gmhsa": "use_gmhsa"}
PRESETS = {
    "default": {},
    "small": {"F": 65, "H": 32, "H_prime": 8, "H_dprime": 64, "B": 2, "L": 4, "T_max": 512},
    "tiny": model.tiny_config().to_dict(),
}
DATA_DEFAULTS = {"count": 8, "duration": 1.0, "speakers": 2, "mics": 1, "sample_rate": 8000,
                 "anechoic": False, "noise": True, "train": None, "valid": None}


class UsageError(Exception):
    """Bad arguments detected after parsing; reported with exit code 1."""


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "run"
    preset: str = "default"
    model: dict = field(default_factory=dict)  # overrides applied on top of the preset
    train: dict = field(default_factory=dict)  # TrainConfig fields
    data: dict = field(default_factory=dict)  # generation settings and manifest paths
    ablation: list = field(default_factory=list)

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {self.preset!r}; expected one of {sorted(PRESETS)}")
        for a in self.ablation:
            if a not in ABLATIONS:
                raise ConfigurationError(f"unknown ablation {a!r}; expected one of {sorted(ABLATIONS)}")
        unknown = sorted(set(self.data) - set(DATA_DEFAULTS))
        if unknown:
            raise ConfigurationError(f"unknown data config keys: {unknown}")

    def model_config(self) -> model.ModelConfig:
        values = {**PRESETS[self.preset], **self.model}
        for a in self.ablation:
            values[ABLATIONS[a]] = False
        return model.ModelConfig.from_dict(values)

    def train_config(self) -> trainer.TrainConfig:
        return trainer.TrainConfig.from_dict({"seed": self.seed, **self.train})

    def data_value(self, key: str):
        return self.data.get(key, DATA_DEFAULTS[key])

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> int:
        return model.config_hash(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown run config keys: {unknown}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def sidecar(checkpoint: str | Path) -> Path:
    """Run config stored next to a checkpoint: ``model.xnet`` -> ``model.xnet.json``."""
    return Path(str(checkpoint) + ".json")


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run options")
    g.add_argument("--config", help="run config JSON; flags override its values")
    g.add_argument("--seed", type=int, help="root seed (default 0)")
    g.add_argument("--out", help="output directory")
    g.add_argument("--checkpoint", help="checkpoint path")
    g.add_argument("--preset", choices=sorted(PRESETS), help="base model size")
    g.add_argument("--ablation", action="append", choices=sorted(ABLATIONS),
                   help="remove a component; may be repeated")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crossnet", description="Multi-microphone speaker separation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="synthesize a reverberant mixture dataset")
    _common(p)
    p.add_argument("--count", type=int)
    p.add_argument("--duration", type=float, help="seconds per scene")
    p.add_argument("--speakers", type=int)
    p.add_argument("--mics", type=int)
    p.add_argument("--sample-rate", type=int, choices=dsp.SAMPLE_RATES)
    p.add_argument("--anechoic", action="store_true", default=None)
    p.add_argument("--no-noise", action="store_true", default=None)

    p = sub.add_parser("train", help="train a separator on a manifest")
    _common(p)
    p.add_argument("manifest", nargs="?", help="training manifest.json")
    p.add_argument("--valid", help="validation manifest.json")
    p.add_argument("--steps", type=int, help="stop after this many optimizer steps")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--crop", type=float, help="crop length in seconds; 0 trains on whole utterances")
    p.add_argument("--lr", type=float, help="fixed learning rate instead of the schedule")
    p.add_argument("--loss", choices=("mag+sisdr", "sisdr"))
    p.add_argument("--sisdr-numerator", choices=("reference", "projection"))
    p.add_argument("--grad-clip", type=float)
    p.add_argument("--patience", type=int, help="early-stopping patience in epochs")

    p = sub.add_parser("separate", help="separate one mixture WAV into per-speaker WAVs")
    _common(p)
    p.add_argument("mixture", help="mixture WAV")
    p.add_argument("-o", "--output-dir", help="directory for the speaker WAVs (default: --out)")

    p = sub.add_parser("eval", help="score a checkpoint on a manifest")
    _common(p)
    p.add_argument("manifest")
    p.add_argument("eval_checkpoint", nargs="?", metavar="checkpoint")

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive and module")
    _common(p)
    p.add_argument("--seeds", type=int, default=5, help="number of seeds, starting at --seed")

    p = sub.add_parser("flops", help="forward FLOPs by module")
    _common(p)
    p.add_argument("--mics", type=int)
    p.add_argument("--seconds", type=float, default=4.0)
    p.add_argument("--sample-rate", type=int, default=8000)
    p.add_argument("--convention", choices=("matmul", "full"), default="matmul",
                   help="headline convention (both totals are printed)")
    p.add_argument("--json", action="store_true", help="machine-readable output")

    p = sub.add_parser("inspect", help="describe a checkpoint or, without one, a configuration")
    _common(p)
    p.add_argument("inspect_checkpoint", nargs="?", metavar="checkpoint")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    return parser


def resolve(args: argparse.Namespace, checkpoint: str | None = None) -> RunConfig:
    """Preset, then config file (or a checkpoint's sidecar), then flags."""
    if args.config:
        run = RunConfig.from_json(args.config)
    elif checkpoint and sidecar(checkpoint).exists():
        run = RunConfig.from_json(sidecar(checkpoint))
    else:
        run = RunConfig()
    if args.seed is not None:
        run.seed = args.seed
    if args.out is not None:
        run.out = args.out
    if args.preset is not None:
        run.preset = args.preset
    if args.ablation:
        run.ablation = sorted(set(run.ablation) | set(args.ablation))
    run.__post_init__()
    return run


def _set(section: dict, key: str, value) -> None:
    if value is not None:
        section[key] = value


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args, run: RunConfig) -> int:
    d = run.data
    for key, val in (("count", args.count), ("duration", args.duration), ("speakers", args.speakers),
                     ("mics", args.mics), ("sample_rate", args.sample_rate), ("anechoic", args.anechoic)):
        _set(d, key, val)
    if args.no_noise:
        d["noise"] = False
    if run.data_value("count") < 1:
        raise UsageError("--count must be positive")
    template = datagen.SceneTemplate(C=run.data_value("speakers"), M=run.data_value("mics"),
                                     duration=run.data_value("duration"), sample_rate=run.data_value("sample_rate"),
                                     anechoic=run.data_value("anechoic"), noise=run.data_value("noise"),
                                     seed=run.seed)
    out = Path(run.out)
    manifest = datagen.dataset_generate(run.data_value("count"), out, template)
    run.to_json(out / "run_config.json")
    print(f"wrote {len(manifest['scenes'])} scenes to {out / 'manifest.json'}")
    return 0


def _checkpoint_path(args, run: RunConfig) -> Path:
    return Path(args.checkpoint) if args.checkpoint else Path(run.out) / "model.xnet"


def cmd_train(args, run: RunConfig) -> int:
    t = run.train
    _set(t, "max_steps", args.steps)
    _set(t, "max_epochs", args.epochs)
    _set(t, "batch_size", args.batch_size)
    _set(t, "fixed_lr", args.lr)
    _set(t, "loss", args.loss)
    _set(t, "sisdr_numerator", args.sisdr_numerator)
    _set(t, "grad_clip", args.grad_clip)
    _set(t, "early_stop_patience", args.patience)
    if args.crop is not None:
        t["crop_seconds"] = args.crop if args.crop > 0 else None
    _set(run.data, "train", args.manifest)
    _set(run.data, "valid", args.valid)
    if not run.data_value("train"):
        raise UsageError("train needs a manifest (positional or data.train in --config)")
    train_set = datagen.load_utterances(datagen.load_manifest(run.data_value("train")))
    valid = run.data_value("valid")
    valid_set = datagen.load_utterances(datagen.load_manifest(valid)) if valid else None
    # the data fixes the channel and speaker counts unless the config pins them
    run.model.setdefault("M", int(train_set[0].mixture.shape[0]))
    run.model.setdefault("C", int(train_set[0].refs.shape[0]))
    cfg, tcfg = run.model_config(), run.train_config()
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = _checkpoint_path(args, run)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    run.to_json(sidecar(ckpt))
    net = model.CrossNet(cfg, seed=run.seed)
    print(f"model: {model.count_params(cfg)} parameters, config hash {cfg.hash():016x}")
    res = trainer.fit(net, train_set, valid_set, tcfg, log_path=out / "train_log.jsonl", checkpoint_path=ckpt)
    last = res.log[-1]
    print(f"trained {last['step']} steps over {len(res.log)} epochs; best loss {res.best_loss:.4f}"
          f"{' (early stop)' if res.stopped_early else ''}")
    print(f"checkpoint: {ckpt}")
    return 0


def load_network(args, checkpoint: str | None) -> tuple[model.CrossNet, RunConfig]:
    run = resolve(args, checkpoint)
    cfg = run.model_config()
    if checkpoint is None:
        print("note: no checkpoint given, using freshly initialized weights", file=sys.stderr)
        return model.CrossNet(cfg, seed=run.seed), run
    ck = trainer.checkpoint_load(checkpoint, cfg.hash())
    return model.CrossNet(cfg, ck.params()), run


def cmd_separate(args, run: RunConfig) -> int:
    net, run = load_network(args, args.checkpoint)
    w = dsp.read_wav(args.mixture)
    est = net(w).waveforms
    out = Path(args.output_dir or run.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.mixture).stem
    for c in range(est.shape[0]):
        path = out / f"{stem}_s{c + 1}.wav"
        dsp.write_wav(path, dsp.Waveform(est[c], w.sample_rate))
        print(path)
    return 0


def cmd_eval(args, run: RunConfig) -> int:
    checkpoint = args.eval_checkpoint or args.checkpoint
    if checkpoint is None:
        raise UsageError("eval needs a checkpoint")
    net, run = load_network(args, checkpoint)
    utts = datagen.load_utterances(datagen.load_manifest(args.manifest))
    records = []
    for u in utts:
        est = net(u.mixture).waveforms
        records.append(metrics.evaluate(est, u.refs, u.mixture[0], u.id).record())
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_jsonl(out / "metrics.jsonl", records)
    summary = metrics.summarize(records)
    (out / "summary.json").write_text(json.dumps({"utterances": len(records), "run_config_hash": run.hash(),
                                                  **summary}, indent=2) + "\n")
    print(f"{'metric':<16}{'mean (dB)':>12}")
    for key in metrics.SUMMARY_KEYS:
        print(f"{key:<16}{summary[key]:>12.3f}")
    print(f"{len(records)} utterances; records in {out / 'metrics.jsonl'}")
    return 0


def cmd_gradcheck(args, run: RunConfig) -> int:
    if args.seeds < 1:
        raise UsageError("--seeds must be positive")
    reports = diagnostics.gradient_suite(range(run.seed, run.seed + args.seeds))
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<40} max rel err {r.max_rel_error:.2e}")
    bad = sum(not r.passed for r in reports)
    print(f"{len(reports) - bad}/{len(reports)} checks passed (tolerance {diagnostics.TOL:g})")
    return 0 if bad == 0 else 2


def cmd_flops(args, run: RunConfig) -> int:
    if args.mics is not None:
        run.model["M"] = args.mics
    cfg = run.model_config()
    n = int(round(args.seconds * args.sample_rate))
    parts = model.flop_breakdown(cfg, n)
    per_sec = {conv: model.count_flops(cfg, args.seconds, args.sample_rate, conv) / args.seconds / 1e9
               for conv in ("matmul", "full")}
    if args.json:
        print(json.dumps({"mics": cfg.M, "seconds": args.seconds, "sample_rate": args.sample_rate,
                          "params": model.count_params(cfg), "modules": parts,
                          "gflops_per_second": per_sec, "convention": args.convention,
                          "headline": per_sec[args.convention]}, indent=2))
        return 0
    print(f"{cfg.M} mic(s), {args.seconds:g} s at {args.sample_rate} Hz, {model.count_params(cfg)} parameters")
    print(f"{'module':<14}{'matmul GFLOPs':>15}{'other GFLOPs':>15}")
    for name, p in parts.items():
        print(f"{name:<14}{p['matmul'] / 1e9:>15.3f}{p['elementwise'] / 1e9:>15.3f}")
    for conv in ("matmul", "full"):
        print(f"total ({conv} convention): {per_sec[conv]:.2f} GFLOPs per second of audio")
    print(f"headline ({args.convention}): {per_sec[args.convention]:.2f} GFLOPs/s")
    return 0


def _describe(cfg: model.ModelConfig) -> dict:
    return {"config": cfg.to_dict(), "config_hash": f"{cfg.hash():016x}", "params": model.count_params(cfg),
            "census": model.module_census(cfg), "topology": model.topology(cfg)}


def cmd_inspect(args, run: RunConfig) -> int:
    checkpoint = args.inspect_checkpoint or args.checkpoint
    info: dict = {}
    if checkpoint is not None:
        data = Path(checkpoint).read_bytes()
        ck = trainer.checkpoint_parse(data, path=str(checkpoint))
        info["checkpoint"] = {"path": str(checkpoint), "bytes": len(data), "version": trainer.CHECKPOINT_VERSION,
                              "config_hash": f"{ck.config_hash:016x}", "tensor_count": len(ck.tensors),
                              "tensors": {k: list(v.shape) for k, v in ck.tensors.items()}}
        run = resolve(args, checkpoint)
    cfg = run.model_config()
    info.update(_describe(cfg))
    if checkpoint is not None:
        info["checkpoint"]["matches_config"] = ck.config_hash == cfg.hash()
    if args.json:
        print(json.dumps(info, indent=2))
        return 0
    if checkpoint is not None:
        c = info["checkpoint"]
        print(f"checkpoint {c['path']}: {c['bytes']} bytes, version {c['version']}, "
              f"config hash {c['config_hash']}, {c['tensor_count']} tensors")
        for name, shape in c["tensors"].items():
            print(f"  {name:<48} {tuple(shape)}")
        print(f"  matches resolved config: {c['matches_config']}")
    print(f"config hash {info['config_hash']}, {info['params']} trainable parameters")
    print("components: " + ", ".join(f"{k}={'yes' if v else 'no'}" for k, v in info["topology"].items()))
    print(f"{'module':<28}{'params':>12}")
    for name, n in info["census"].items():
        print(f"{name:<28}{n:>12}")
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "separate": cmd_separate, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "flops": cmd_flops, "inspect": cmd_inspect}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # -h exits 0, usage errors exit 1
        return int(exc.code or 0)
    try:
        run = resolve(args)
        print(f"crossnet {args.command}: root seed {run.seed}", file=sys.stderr)
        return COMMANDS[args.command](args, run)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"crossnet: error: {exc}", file=sys.stderr)
        return 1
    except (CrossNetError, OSError, ValueError) as exc:
        print(f"crossnet: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
