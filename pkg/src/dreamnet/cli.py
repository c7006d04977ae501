"""Command line entry point: ``dreamnet {synth,train,eval,gradcheck,inspect}``.

Exit codes: 0 success, 1 usage/config/data error, 2 runtime failure,
3 gradient check failure.
"""

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from .checkpoint import load_checkpoint, save_checkpoint
from .data import SynthSpec, load_dataset, save_dataset, split, synth_generate
from .errors import DreamNetError, NonFinite
from .network import PRESETS, ModelConfig, build, feature_stats, feature_tags
from .optim import OptimState
from .train import evaluate, fit

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_GRADCHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config handling

_MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)}
_RUN_DEFAULTS = {
    "lr": 0.01,
    "decay_factor": None,
    "decay_period": None,
    "epochs": 200,
    "batch_size": 30,
    "eval_period": 1,
    "train_fraction": 0.7,
}


def _parse_value(key, text):
    text = text.strip()
    if key == "backbone_dims":
        return tuple(int(t) for t in text.replace("x", ",").split(",") if t.strip())
    if key == "shortcuts":
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
            raise UsageError(f"shortcuts: expected a boolean, got {text!r}")
        return low in ("true", "1", "yes", "on")
    if key in ("heads", "rt_mode", "rt_metric", "preset"):
        return text
    if text.lower() == "none":
        return None
    if key in ("num_rae", "rae_hidden_dim", "num_classes", "seed", "epochs", "batch_size", "eval_period", "decay_period"):
        return int(text)
    return float(text)


def read_config_file(path):
    """Parse a flat ``key = value`` (or ``key: value``) text file."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        sep = "=" if "=" in text else ":"
        if sep not in text:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (t.strip() for t in text.split(sep, 1))
        key = key.replace("-", "_")
        if key not in _MODEL_KEYS and key not in _RUN_DEFAULTS and key != "preset":
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _parse_value(key, value)
        except ValueError:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


def effective_config(args, num_classes=None):
    """Merge defaults < preset < config file < flags into (ModelConfig, run settings)."""
    merged = dict(_RUN_DEFAULTS)
    model_kw = {}
    file_kw = read_config_file(args.config) if getattr(args, "config", None) else {}
    flag_kw = {k: v for k, v in vars(args).items() if v is not None and (k in _MODEL_KEYS or k in _RUN_DEFAULTS or k == "preset")}
    preset = flag_kw.get("preset", file_kw.get("preset"))
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        model_kw.update(PRESETS[preset])
    for src in (file_kw, flag_kw):
        for k, v in src.items():
            if k == "preset":
                continue
            (model_kw if k in _MODEL_KEYS else merged)[k] = v
    if num_classes is not None:
        model_kw.setdefault("num_classes", num_classes)
    config = ModelConfig(**model_kw).validate()
    return config, merged


def _write_flat_config(path, config, run):
    lines = [f"{k} = {','.join(map(str, v)) if isinstance(v, (list, tuple)) else v}" for k, v in config.to_dict().items()]
    lines += [f"{k} = {v}" for k, v in run.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------- commands


def cmd_synth(args):
    spec = SynthSpec(
        dim=args.dim,
        num_classes=args.classes,
        sets_per_class=args.sets_per_class,
        frames_per_set=args.frames,
        separation=args.separation,
        seed=args.seed,
    )
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    samples = synth_generate(spec)
    manifest = save_dataset(samples, args.out)
    print(f"wrote {manifest}: N={len(samples)} dim={samples.dim} classes={samples.num_classes} provenance={samples.provenance}")
    return EXIT_OK


def cmd_train(args):
    data = load_dataset(args.data)
    if len(data) == 0:
        raise UsageError(f"{args.data}: dataset is empty")
    meta_in = None
    if args.resume:
        model, meta_in = load_checkpoint(args.resume)
        config = model.config
        run = dict(_RUN_DEFAULTS)
        run.update(meta_in.get("run", {}))
        for k in _RUN_DEFAULTS:
            if getattr(args, k, None) is not None:
                run[k] = getattr(args, k)
    else:
        config, run = effective_config(args, num_classes=data.num_classes)
        model = build(config)
    if config.backbone_dims[0] != data.dim or config.num_classes != data.num_classes:
        raise UsageError(
            f"model expects dim {config.backbone_dims[0]} / {config.num_classes} classes, "
            f"dataset has dim {data.dim} / {data.num_classes} classes"
        )
    if args.test_data:
        train_set, test_set = data, load_dataset(args.test_data)
    elif run["train_fraction"] >= 1:
        train_set, test_set = data, None
    else:
        train_set, test_set = split(data, run["train_fraction"], config.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_flat_config(out / "config.txt", config, run)
    state = OptimState(run["lr"], run["decay_factor"], run["decay_period"])
    start = 1
    best = -1.0
    if meta_in is not None:
        state.step = meta_in.get("step", 0)
        start = meta_in.get("epoch", 0) + 1
        best = meta_in.get("best_vote_acc", -1.0)

    metrics = open(out / "metrics.jsonl", "a")
    timings = open(out / "timings.jsonl", "a")

    def meta(epoch, best_acc):
        return {"epoch": epoch, "step": state.step, "run": run, "best_vote_acc": best_acc}

    def on_epoch(m, rec):
        nonlocal best
        timing = rec.pop("timing")
        metrics.write(_dumps(rec) + "\n")
        metrics.flush()
        timings.write(_dumps({"epoch": rec["epoch"], **timing}) + "\n")
        timings.flush()
        acc = rec.get("test_vote_acc", rec["vote_acc"])
        if acc > best:
            best = acc
            save_checkpoint(out / "best.ckpt", m, meta(rec["epoch"], best))
        if not args.quiet:
            print(
                f"epoch {rec['epoch']:4d}  loss {rec['train_loss']:.4f}  rt {rec['rt']:.4f}  "
                f"vote {rec['vote_acc']:.4f}" + (f"  test {rec['test_vote_acc']:.4f}" if "test_vote_acc" in rec else "")
            )

    try:
        model, records = fit(
            model,
            train_set,
            run["epochs"],
            state=state,
            batch_size=run["batch_size"],
            seed=config.seed,
            test_set=test_set,
            eval_period=run["eval_period"],
            start_epoch=start,
            on_epoch=on_epoch,
        )
    finally:
        metrics.close()
        timings.close()
    last_epoch = records[-1]["epoch"] if records else start - 1
    save_checkpoint(out / "final.ckpt", model, meta(last_epoch, best))
    return EXIT_OK


def cmd_eval(args):
    model, meta = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    if len(data) == 0:
        raise UsageError(f"{args.data}: dataset is empty")
    if data.dim != model.config.backbone_dims[0] or data.num_classes != model.config.num_classes:
        raise UsageError(
            f"checkpoint expects dim {model.config.backbone_dims[0]} / {model.config.num_classes} classes, "
            f"dataset has dim {data.dim} / {data.num_classes} classes"
        )
    ev = evaluate(model, data)
    for stage, acc in zip(model.config.head_stages, ev["head_acc"]):
        print(f"head {stage}: {acc:.4f}")
    print(f"vote: {ev['vote_acc']:.4f}")
    print("confusion (rows = true class):")
    for row in ev["confusion"]:
        print("  " + " ".join(f"{v:5d}" for v in row))
    record = {"checkpoint": str(args.checkpoint), "data": str(args.data), "config": model.config.to_dict(), **ev}
    if args.out:
        Path(args.out).write_text(_dumps(record) + "\n")
    return EXIT_OK


def cmd_gradcheck(args):
    layers = args.layer or list(gc.LAYERS) + ["model"]
    ok = True
    print(f"{'check':<10} {'block':<14} {'rel.err':>10}")
    for name in layers:
        if name == "model":
            tol = 1e-4 if args.tol is None else args.tol
            report = gc.check_model(gc.TINY_CONFIG, batch_size=2, tol=tol, h=args.h, seed=args.seed)
        else:
            report = gc.check_layer(name, trials=args.trials, tol=args.tol, h=args.h, seed=args.seed)
        for line in report.lines():
            print(line)
        ok &= report.passed
    print("ALL PASS" if ok else "FAILURES PRESENT")
    return EXIT_OK if ok else EXIT_GRADCHECK


def cmd_inspect(args):
    model, _ = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    if len(data) == 0:
        raise UsageError(f"{args.data}: dataset is empty")
    if data.dim != model.config.backbone_dims[0]:
        raise UsageError(f"checkpoint expects dim {model.config.backbone_dims[0]}, dataset has {data.dim}")
    stats = feature_stats(model, data.matrices)
    tags = feature_tags(model.config)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "layer", "nuclear_norm"])
        for i, sid in enumerate(data.ids):
            for tag, norms in stats:
                w.writerow([sid, tag, repr(float(norms[i]))])
        for tag, norms in stats:
            w.writerow(["mean", tag, repr(float(np.mean(norms)))])
    print(f"wrote {args.out}: {len(data)} samples x {len(tags)} layers")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _dims(text):
    try:
        return tuple(int(t) for t in text.replace("x", ",").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad dimension list {text!r}") from None


def _add_model_flags(p):
    g = p.add_argument_group("model (flags override --config, which overrides defaults)")
    g.add_argument("--config", help="flat key = value file")
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--backbone-dims", dest="backbone_dims", type=_dims, help="e.g. 20,16,12")
    g.add_argument("--num-rae", dest="num_rae", type=int)
    g.add_argument("--rae-hidden-dim", dest="rae_hidden_dim", type=int)
    g.add_argument("--eps", type=float)
    g.add_argument("--lambda-rt", dest="lambda_rt", type=float)
    g.add_argument("--shortcuts", dest="shortcuts", action="store_true", default=None)
    g.add_argument("--no-shortcuts", dest="shortcuts", action="store_false")
    g.add_argument("--heads", choices=["all", "final"])
    g.add_argument("--rt-mode", dest="rt_mode", choices=["final", "all"])
    g.add_argument("--rt-metric", dest="rt_metric", choices=["euclidean", "log-euclidean"])
    g.add_argument("--seed", type=int)
    o = p.add_argument_group("optimization")
    o.add_argument("--lr", type=float)
    o.add_argument("--decay-factor", dest="decay_factor", type=float)
    o.add_argument("--decay-period", dest="decay_period", type=int)
    o.add_argument("--epochs", type=int)
    o.add_argument("--batch-size", dest="batch_size", type=int)
    o.add_argument("--eval-period", dest="eval_period", type=int)
    o.add_argument("--train-fraction", dest="train_fraction", type=float, help="1 trains on the whole set")


def build_parser():
    parser = argparse.ArgumentParser(prog="dreamnet", description="SPD-matrix deep network training tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic SPD dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=20)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--sets-per-class", type=int, default=100)
    p.add_argument("--frames", type=int, default=80)
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--test-data", help="held-out manifest (default: stratified split of --data)")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--quiet", action="store_true")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="JSON record path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference checks of all backward passes")
    p.add_argument("--layer", action="append", choices=list(gc.LAYERS) + ["model"])
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--tol", type=float)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="per-layer nuclear norms as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except NonFinite as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (UsageError, DreamNetError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
