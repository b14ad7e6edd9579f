"""Command line: gen, train, eval, sweep.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys

from ..groundtruth import SIGMA_CHOICES
from ..nnkit import CheckpointError
from ..synthgen import ALLOWED_BIAS
from .config import ConfigError, DataConfig, ExperimentConfig, load_config, parse_sigma
from .data import generate, load_split, read_meta
from .results import append_run
from .sweep import cmd_sweep
from .train import evaluate_model, load_trained, run

log = logging.getLogger("dcreg")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    """argparse errors, re-raised so they map to the validation exit code."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p = _Parser(prog="dcreg", description="Synthetic counting lab: data, training, evaluation, sweeps.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="generate a train/test dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--num-images", type=int, default=1000, help="training images")
    g.add_argument("--num-test", type=int, default=None, help="test images (default: same as --num-images)")
    g.add_argument("--partial", choices=["none", "with"], default="none")
    g.add_argument("--dot-bias", type=int, default=0)
    g.add_argument("--bias-mode", choices=["two_point", "range"], default="two_point")
    g.add_argument("--sigma", default="gt", help=f"one of {SIGMA_CHOICES}")
    g.add_argument("--true-dots", action="store_true", help="build observed maps from unbiased dots")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--force", action="store_true", help="replace an existing dataset")

    t = sub.add_parser("train", parents=[common], help="train one model and evaluate it on the test split")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="JSON config; flags below override its keys")
    t.add_argument("--loss", choices=["reg", "cls", "dc"])
    t.add_argument("--gc", choices=["none", "c", "bias0", "biasLambda"])
    t.add_argument("--w-gc", type=float)
    t.add_argument("--scheme", choices=["linear", "log"])
    t.add_argument("--n-intervals", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--lr-schedule", choices=["step", "fixed"])
    t.add_argument("--batch", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint and append CSV rows")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True, help="results CSV; bin rows go to a sibling file")
    e.add_argument("--split", choices=["train", "test"], default="test")
    e.add_argument("--config", help="JSON config to evaluate under; must match the checkpoint head")

    s = sub.add_parser("sweep", parents=[common], help="run a grid of configurations with resume")
    s.add_argument("--grid", required=True)
    s.add_argument("--out", required=True)
    return p


def _gen(args) -> int:
    if args.dot_bias not in ALLOWED_BIAS:
        raise ConfigError(f"--dot-bias must be one of {ALLOWED_BIAS}, got {args.dot_bias}")
    num_test = args.num_images if args.num_test is None else args.num_test
    d = DataConfig(num_train=args.num_images, num_test=num_test, partial_objects=args.partial == "with",
                   dot_bias=args.dot_bias, sigma=parse_sigma(args.sigma), use_biased_dots=not args.true_dots,
                   seed=args.seed, bias_mode=args.bias_mode)
    ExperimentConfig(data=d).validate()
    if os.path.isdir(args.out) and os.listdir(args.out):
        if not args.force:
            raise ConfigError(f"{args.out} is not empty (use --force to replace it)")
        for split in ("train", "test"):
            shutil.rmtree(os.path.join(args.out, split), ignore_errors=True)
    generate(d, args.out)
    log.info("wrote %d train and %d test images to %s", d.num_train, d.num_test, args.out)
    return EXIT_OK


def _train_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    meta = read_meta(args.data, "train")
    overrides = {}
    if "data_config" in meta:
        overrides.update({f"data.{k}": v for k, v in meta["data_config"].items()})
    flags = {"loss.main": args.loss, "loss.gc": args.gc, "loss.w_gc": args.w_gc,
             "partition.scheme": args.scheme, "partition.n_intervals": args.n_intervals,
             "training.epochs": args.epochs, "training.lr": args.lr, "training.lr_schedule": args.lr_schedule,
             "training.batch_size": args.batch, "training.seed": args.seed}
    overrides.update({k: v for k, v in flags.items() if v is not None})
    return cfg.with_overrides(overrides)


def _train(args) -> int:
    try:
        cfg = _train_config(args)
    except FileNotFoundError as exc:
        raise ConfigError(f"no dataset at {args.data}: {exc}") from None
    result = run(cfg, args.data, args.out)
    if result.status != "ok":
        log.error("training %s: %s", result.status, result.error)
        return EXIT_RUNTIME
    log.info("test mae %.4f rmse %.4f (%.1fs)", result.summary["mae"], result.summary["rmse"], result.wall_time)
    return EXIT_OK


def _eval(args) -> int:
    model, cfg, partition = load_trained(args.model)
    if args.config:
        override = load_config(args.config)
        if (override.loss.main == "cls") != (model.spec.head == "logits"):
            raise ConfigError(f"config loss {override.loss.main!r} does not match a {model.spec.head} checkpoint")
        cfg.eval = override.eval
    split = load_split(args.data, args.split)
    summary = evaluate_model(cfg, model, split, partition).to_dict()
    row_cfg = cfg.to_dict()
    meta = read_meta(args.data, args.split)
    row_cfg["data"].update(meta.get("data_config", {}))
    run_id = append_run(args.out, cfg.digest()[:12], row_cfg, summary)
    print(json.dumps({"run_id": run_id, **summary}))
    return EXIT_OK


def _sweep(args) -> int:
    with open(args.grid) as f:
        spec = json.load(f)
    results = cmd_sweep(spec, args.out)
    failed = [r for r in results if r.status != "ok"]
    log.info("%d runs, %d failed", len(results), len(failed))
    return EXIT_RUNTIME if failed else EXIT_OK


COMMANDS = {"gen": _gen, "train": _train, "eval": _eval, "sweep": _sweep}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, CheckpointError, FloatingPointError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
