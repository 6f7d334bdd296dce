"""Command-line entry point: synth / train / eval / probe / sweep / report.

Exit codes: 0 success, 2 usage error, 3 data or format error, 4 numeric abort.
Artifacts are written under the global ``--out`` directory; input paths resolve
against the working directory.  Every subcommand writes a ``command.json`` echo
of its flags before doing work.  The environment variable ``PND_THREADS`` caps
worker parallelism for ``sweep``.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys

import numpy as np

from .checkpoint import CheckpointFormatError
from .data import ATTRIBUTES, DataFormatError, DatasetSpec, dataset_hash, load, synthesize
from .evaluate import SpecError, evaluate, probe_grid, sweep_bias_count
from .losses import TrainHyper
from .model import BaselineClassifier, ModelConfig, PnDModel
from .report import aggregate, report_csv, report_markdown, report_svg, sweep_chart
from .tensor import NumericError
from .train import TrainConfig, load_model, train_baseline, train_pnd

HYPER_KEYS = tuple(f.name for f in dataclasses.fields(TrainHyper))


class UsageError(ValueError):
    """Bad flags or config; maps to exit code 2."""


def _resolve(path: str) -> str:
    """Inputs resolve against the working directory; outputs live under --out."""
    return os.path.abspath(path)


def _echo_command(out_dir: str, args: argparse.Namespace) -> None:
    os.makedirs(out_dir, exist_ok=True)
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    with open(os.path.join(out_dir, "command.json"), "w") as f:
        json.dump({"command": args.subcommand, "flags": flags}, f, indent=1, sort_keys=True)
        f.write("\n")


def family_hash(manifest: dict | None) -> str | None:
    """Identifies the synthesis (spec + seed) all three splits came from."""
    if not manifest or "spec" not in manifest:
        return None
    blob = json.dumps(manifest["spec"], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def parse_train_config(raw: dict) -> tuple[TrainConfig, ModelConfig | None]:
    """Validate a config document; errors name the offending field.

    Loss hyperparameters may sit at the top level or under ``hyper``; a
    ``model`` object overrides architecture defaults.  ``alpha`` is required.
    """
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    d = dict(raw)
    model_cfg = None
    if "model" in d:
        try:
            model_cfg = ModelConfig.from_dict(d.pop("model"))
        except (TypeError, ValueError) as e:
            raise UsageError(f"invalid model config: {e}") from None
    hyper = dict(d.pop("hyper", {}))
    for key in HYPER_KEYS:
        if key in d:
            hyper.setdefault(key, d.pop(key))
    if "alpha" not in hyper:
        raise UsageError('config missing required field "alpha"')
    try:
        return TrainConfig.from_dict({**d, "hyper": hyper}), model_cfg
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid config: {e}") from None


def _load_split(data_dir: str, split: str):
    path = os.path.join(data_dir, f"{split}.pndb")
    if not os.path.isfile(path):
        raise DataFormatError(f"{data_dir}: no {split}.pndb")
    return path, load(path)


def _load_config_file(path: str) -> tuple[TrainConfig, ModelConfig | None]:
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: invalid JSON ({e})") from None
    return parse_train_config(raw)


# -- subcommands -----------------------------------------------------------------


def cmd_synth(args) -> int:
    if not 1 <= args.biases <= len(ATTRIBUTES):
        raise UsageError(f"--biases must be in 1..{len(ATTRIBUTES)}, got {args.biases}")
    if not 0.0 <= args.rho <= 1.0:
        raise UsageError(f"--rho must be in [0, 1], got {args.rho}")
    try:
        spec = DatasetSpec.with_first_biases(
            args.biases, rho=args.rho, n_train=args.train, n_val=args.val,
            n_test=args.test, image_size=args.size, seed=args.seed,
        )
    except ValueError as e:
        raise UsageError(str(e)) from None
    out_dir = args.out
    _echo_command(out_dir, args)
    paths = synthesize(spec, out_dir)
    for split in ("train", "val", "test"):
        ds = load(paths[split])
        census = ds.census()
        fracs = " ".join(f"{n}={census.aligned_fraction(n):.3f}" for n in ds.attr_names)
        print(f"wrote {paths[split]} ({len(ds)} samples, {ds.image_size}x{ds.image_size})")
        print(f"  aligned fraction: {fracs}")
    return 0


def cmd_train(args) -> int:
    data_dir = _resolve(args.data)
    out_dir = args.out
    if args.config is not None:
        config, model_cfg = _load_config_file(_resolve(args.config))
    else:
        config, model_cfg = TrainConfig(), None
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    config = dataclasses.replace(config, deterministic=args.deterministic)
    train_path, train_data = _load_split(data_dir, "train")
    val_path, val_data = _load_split(data_dir, "val")
    if model_cfg is None:
        model_cfg = ModelConfig(image_size=train_data.image_size)
    _echo_command(out_dir, args)
    provenance = {
        "train_data": dataset_hash(train_path),
        "val_data": dataset_hash(val_path),
        "family": family_hash(train_data.manifest),
    }
    fn = train_pnd if args.method == "pnd" else train_baseline
    record = fn(train_data, val_data, model_cfg, config, out_dir, provenance)
    print(f"best val acc {record.best_val_acc:.4f} (epoch {record.best_epoch})")
    print(f"checkpoints: {record.ckpt_best} {record.ckpt_last}")
    return 0


def _ckpt_prefix(path: str) -> str:
    return path[:-5] if path.endswith(".json") else path


def _ckpt_blob_hash(prefix: str) -> str:
    with open(prefix + ".json") as f:
        return json.load(f)["blob_sha256"]


def _warn_on_foreign_data(meta: dict, ds, data_path: str) -> None:
    recorded = (meta.get("provenance") or {}).get("family")
    actual = family_hash(ds.manifest)
    if recorded and actual and recorded != actual:
        print(f"warning: {data_path} is not from the dataset this checkpoint was trained on "
              f"(family {actual[:12]} vs recorded {recorded[:12]})", file=sys.stderr)


def cmd_eval(args) -> int:
    prefix = _ckpt_prefix(_resolve(args.model))
    data_dir = _resolve(args.data)
    out_dir = args.out
    model, meta = load_model(prefix)
    data_path, ds = _load_split(data_dir, args.split)
    _echo_command(out_dir, args)
    _warn_on_foreign_data(meta, ds, data_path)
    d_hash, c_hash = dataset_hash(data_path), _ckpt_blob_hash(prefix)
    rep = evaluate(model, ds, dataset_hash=d_hash, ckpt_hash=c_hash)
    stem = os.path.join(out_dir, f"eval_{c_hash[:8]}_{d_hash[:8]}")
    with open(stem + ".csv", "w", newline="") as f:
        f.write(rep.to_csv())
    with open(stem + ".md", "w") as f:
        f.write(rep.to_markdown())
    print(f"overall acc {rep.overall_acc:.4f} on {rep.n} samples ({rep.method})")
    print(f"wrote {stem}.csv and .md")
    return 0


def cmd_probe(args) -> int:
    prefix = _ckpt_prefix(_resolve(args.model))
    data_dir = _resolve(args.data)
    out_dir = args.out
    model, meta = load_model(prefix)
    if not isinstance(model, BaselineClassifier):
        raise UsageError("probe expects a single-encoder (baseline) checkpoint")
    train_path, train_data = _load_split(data_dir, "train")
    test_path, test_data = _load_split(data_dir, "test")
    _echo_command(out_dir, args)
    _warn_on_foreign_data(meta, train_data, train_path)
    d_hash, c_hash = dataset_hash(test_path), _ckpt_blob_hash(prefix)
    if args.attribute is not None:
        from .evaluate import depth_probe

        accs = depth_probe(model, train_data, test_data, args.attribute,
                           seed=args.seed or 0)
        stem = os.path.join(out_dir, f"probe_{c_hash[:8]}_{d_hash[:8]}")
        with open(stem + ".csv", "w", newline="") as f:
            f.write("block,attribute,accuracy\n")
            for b, acc in enumerate(accs, start=1):
                f.write(f"{b},{args.attribute},{acc}\n")
        print(f"{args.attribute}: " + " ".join(f"b{b}={a:.3f}" for b, a in enumerate(accs, 1)))
    else:
        rep = probe_grid(model, train_data, test_data, seed=args.seed or 0,
                         dataset_hash=d_hash, ckpt_hash=c_hash)
        stem = os.path.join(out_dir, f"probe_{c_hash[:8]}_{d_hash[:8]}")
        with open(stem + ".csv", "w", newline="") as f:
            f.write(rep.to_csv())
        with open(stem + ".md", "w") as f:
            f.write(rep.to_markdown())
        for name in rep.attributes:
            print(f"{name}: best block {rep.best_block(name)}")
    print(f"wrote {stem}.csv")
    return 0


def _parse_counts(text: str) -> list[int]:
    try:
        out = []
        for part in text.split(","):
            if "-" in part:
                lo, _, hi = part.partition("-")
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise UsageError(f"cannot parse --counts {text!r}") from None
    if not out or any(not 1 <= c <= len(ATTRIBUTES) for c in out):
        raise UsageError(f"--counts entries must be in 1..{len(ATTRIBUTES)}: {text!r}")
    return out


def cmd_sweep(args) -> int:
    counts = _parse_counts(args.counts)
    try:
        seeds = [int(s) for s in str(args.seeds).split(",")]
    except ValueError:
        raise UsageError(f"cannot parse --seeds {args.seeds!r}") from None
    out_dir = args.out
    if args.config is not None:
        config, model_cfg = _load_config_file(_resolve(args.config))
    else:
        config, model_cfg = TrainConfig(), None
    if model_cfg is None:
        model_cfg = ModelConfig(image_size=args.size)
    _echo_command(out_dir, args)
    n_workers = max(1, int(os.environ.get("PND_THREADS", "1")))
    rows = sweep_bias_count(
        counts, seeds, args.rho, out_dir,
        spec_kw={"n_train": args.train, "n_val": args.val, "n_test": args.test,
                 "image_size": args.size, "seed": args.seed or 0},
        model_config=model_cfg, train_config=config, n_workers=n_workers,
    )
    from .evaluate import aggregate_sweep

    agg_rows = aggregate_sweep(rows)
    with open(os.path.join(out_dir, "sweep.svg"), "w") as f:
        f.write(sweep_chart(agg_rows))
    with open(os.path.join(out_dir, "sweep.md"), "w") as f:
        f.write(report_markdown({"runs": [], "sweeps": [{"dir": out_dir, "rows": agg_rows}]}))
    for r in agg_rows:
        print(f"count {r['count']} {r['method']}: {r['mean_acc']:.4f} +- {r['std_acc']:.4f}")
    return 0


def cmd_report(args) -> int:
    paths = [_resolve(p) for p in args.runs]
    out_dir = args.out
    agg = aggregate(paths)
    _echo_command(out_dir, args)
    formats = ("csv", "md", "svg") if args.format == "all" else (args.format,)
    for fmt in formats:
        target = os.path.join(out_dir, f"report.{fmt}")
        text = {"csv": report_csv, "md": report_markdown, "svg": report_svg}[fmt](agg)
        with open(target, "w", newline="" if fmt == "csv" else None) as f:
            f.write(text)
        print(f"wrote {target}")
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                        default=True, help="seeded, reproducible runs")
    common.add_argument("--out", default=".", help="output directory (relative paths resolve here)")

    p = argparse.ArgumentParser(prog="demix",
                                description="multi-bias digit benchmark: synthesis, "
                                            "debiased training, evaluation, probing")
    sub = p.add_subparsers(dest="subcommand", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a dataset")
    s.add_argument("--biases", type=int, default=len(ATTRIBUTES))
    s.add_argument("--rho", type=float, default=0.95)
    s.add_argument("--train", type=int, default=10000)
    s.add_argument("--val", type=int, default=2000)
    s.add_argument("--test", type=int, default=2000)
    s.add_argument("--size", type=int, default=64)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="train one model")
    s.add_argument("--data", required=True, help="directory with train.pndb / val.pndb")
    s.add_argument("--method", choices=("pnd", "baseline"), default="pnd")
    s.add_argument("--config", default=None, help="JSON training config")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    s.add_argument("--model", required=True, help="checkpoint prefix (or its .json)")
    s.add_argument("--data", required=True, help="directory with split files")
    s.add_argument("--split", choices=("train", "val", "test"), default="test")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("probe", parents=[common], help="linear depth probes")
    s.add_argument("--model", required=True, help="baseline checkpoint prefix")
    s.add_argument("--data", required=True, help="directory with split files")
    s.add_argument("--attribute", default=None, help="one attribute (default: all)")
    s.set_defaults(func=cmd_probe)

    s = sub.add_parser("sweep", parents=[common], help="accuracy vs active bias count")
    s.add_argument("--counts", default="1-7", help="e.g. 1-7 or 1,3,5")
    s.add_argument("--seeds", default="0,1,2", help="training seeds, comma separated")
    s.add_argument("--rho", type=float, default=0.95)
    s.add_argument("--train", type=int, default=4000)
    s.add_argument("--val", type=int, default=1000)
    s.add_argument("--test", type=int, default=1000)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--config", default=None, help="JSON training config for every run")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("report", parents=[common], help="aggregate runs / sweeps")
    s.add_argument("--runs", nargs="+", required=True, help="run or sweep directories")
    s.add_argument("--format", choices=("csv", "md", "svg", "all"), default="all")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.out = os.path.abspath(args.out)
    try:
        return args.func(args)
    except (UsageError, SpecError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (DataFormatError, CheckpointFormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric abort: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
