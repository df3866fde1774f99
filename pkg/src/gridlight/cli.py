"""Command-line interface.

    gridlight train   --config desk.cfg --out runs/train
    gridlight eval    --config desk.cfg --controller fixed --out runs/fixed
    gridlight mfd     --run-log runs/fixed/steps/run_fixed_7200_30_0.csv --out mfd.csv
    gridlight compare runs/fixed/summary.csv runs/rl/summary.csv --out compare.csv

Config files are flat ``key = value`` text (see README for the key list);
any ``--set key=value`` flag overrides a file key.  Exit status is 0 on
success and 1 with a diagnostic on stderr otherwise.
"""
from __future__ import annotations

import argparse
import sys

from .bench import ConfigError, cmd_compare, cmd_eval, cmd_mfd, cmd_train, load_config


def _collect_overrides(args) -> dict[str, str]:
    overrides: dict[str, str] = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    for key in ("controller", "checkpoint", "reward", "episodes", "seed",
                "workers", "repetitions", "episode_len", "rows", "cols"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = str(value)
    if getattr(args, "demands", None):
        overrides["demands"] = args.demands
    if getattr(args, "randomness", None):
        overrides["randomness"] = args.randomness
    if getattr(args, "save_steps", False):
        overrides["save_steps"] = "true"
    return overrides


def _add_common(parser):
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--rows", type=int)
    parser.add_argument("--cols", type=int)
    parser.add_argument("--episode-len", dest="episode_len", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridlight",
                                     description="Traffic-signal RL benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the PPO controller")
    _add_common(p_train)
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--reward", choices=["hybrid", "global"])
    p_train.add_argument("--episodes", type=int)

    p_eval = sub.add_parser("eval", help="run an evaluation sweep")
    _add_common(p_eval)
    p_eval.add_argument("--out", required=True, help="output directory")
    p_eval.add_argument("--controller", choices=["rl", "fixed", "actuated", "random"])
    p_eval.add_argument("--checkpoint")
    p_eval.add_argument("--workers", type=int)
    p_eval.add_argument("--repetitions", type=int)
    p_eval.add_argument("--demands", help="comma-separated veh/h targets")
    p_eval.add_argument("--randomness", help="comma-separated b values")
    p_eval.add_argument("--save-steps", action="store_true",
                        help="write per-run step logs for later MFD export")

    p_mfd = sub.add_parser("mfd", help="accumulation/outflow series from a run log")
    p_mfd.add_argument("--run-log", required=True)
    p_mfd.add_argument("--out", required=True)

    p_cmp = sub.add_parser("compare", help="percentage deltas between sweep summaries")
    p_cmp.add_argument("reports", nargs="+", help="summary.csv files; first is the baseline")
    p_cmp.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            config = load_config(args.config, _collect_overrides(args))
            checkpoint = cmd_train(config, args.out)
            print(f"checkpoint: {checkpoint}")
        elif args.command == "eval":
            config = load_config(args.config, _collect_overrides(args))
            runs, summary = cmd_eval(config, args.out)
            print(f"runs: {runs}")
            print(f"summary: {summary}")
        elif args.command == "mfd":
            out = cmd_mfd(args.run_log, args.out)
            print(f"mfd: {out}")
        elif args.command == "compare":
            out = cmd_compare(args.reports, args.out)
            print(f"compare: {out}")
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"gridlight: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
