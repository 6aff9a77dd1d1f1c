"""Command-line entry point: config-driven experiments with deterministic
CSV/JSON artifacts.

    dynfuse train   --config cfg.json [--out DIR] [--jobs N] [--seed-override 0,1]
    dynfuse sweep   --config cfg.json ...
    dynfuse gdp     --config cfg.json ...
    dynfuse ablate  --config cfg.json ...
    dynfuse compare --config cfg.json --axis predictor_target|uncertainty ...

The output directory resolves as --out, then the config's output_dir, then
$DYNFUSE_OUT, then ./runs/<command>.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, load_config
from .experiments import COMPARE_AXES, cmd_ablate, cmd_compare, cmd_gdp, cmd_sweep, cmd_train

OUTPUT_ENV = "DYNFUSE_OUT"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynfuse",
        description="Confidence-weighted dynamic late fusion experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("train", "train one model and write its checkpoint and epoch log"),
        ("sweep", "noise-robustness accuracy table over strategies and seeds"),
        ("gdp", "aggregate-covariance ensemble study"),
        ("ablate", "weight-pipeline component ablation"),
        ("compare", "compare prediction targets or uncertainty measures"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--jobs", type=int, default=None, help="worker processes")
        p.add_argument(
            "--seed-override", default=None,
            help="comma-separated seeds replacing the config's list",
        )
        if name == "compare":
            p.add_argument(
                "--axis", required=True, choices=sorted(COMPARE_AXES),
                help="which fusion knob to sweep",
            )
    return parser


def resolve_out_dir(args, cfg) -> str:
    if args.out:
        return args.out
    if cfg.output_dir:
        return cfg.output_dir
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return os.path.join(env, args.command)
    return os.path.join("runs", args.command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.jobs is not None:
            if args.jobs < 1:
                raise ConfigError("jobs", "must be >= 1")
            cfg.jobs = args.jobs
        if args.seed_override:
            try:
                cfg.seeds = [int(s) for s in args.seed_override.split(",") if s.strip()]
            except ValueError:
                raise ConfigError("seeds", f"bad --seed-override {args.seed_override!r}")
            if not cfg.seeds:
                raise ConfigError("seeds", "--seed-override gave no seeds")
        out_dir = resolve_out_dir(args, cfg)
        if args.command == "train":
            info = cmd_train(cfg, out_dir)
        elif args.command == "sweep":
            info = cmd_sweep(cfg, out_dir)
        elif args.command == "gdp":
            info = cmd_gdp(cfg, out_dir)
        elif args.command == "ablate":
            info = cmd_ablate(cfg, out_dir)
        else:
            info = cmd_compare(cfg, out_dir, args.axis)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    summary = " ".join(f"{k}={v}" for k, v in info.items())
    print(f"{args.command} done: out={out_dir} {summary}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
