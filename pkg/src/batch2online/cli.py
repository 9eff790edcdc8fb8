"""Command line entry point: ``batch2online {cluster,lowrank,regress,sensitivity}``."""
from __future__ import annotations

import argparse
import json
import sys

from .bench import PROBLEMS, ConfigError, ExperimentConfig, run_experiment

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def int_list(text):
    """``"1,2,5-8"`` -> ``[1, 2, 5, 6, 7, 8]``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _add_common(p):
    p.add_argument("--config", help="JSON file; every key mirrors a flag, flags win")
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--z", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--seeds", type=int_list, help="e.g. 0,1,2 or 0-19")
    p.add_argument("--ordering", choices=("random", "as-given", "sorted-norm"))
    p.add_argument("--mode", choices=("fresh", "lazy"))
    p.add_argument("--out", help="output directory")
    p.add_argument("--data", help="CSV of points, one per row, no header")
    p.add_argument("--paper-verbatim-weights", action="store_true", default=None)
    p.add_argument("--const-n1", type=float)
    p.add_argument("--const-n2", type=float)
    p.add_argument("--const-m", type=float)
    p.add_argument("--separation", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--rank", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--opt-restarts", type=int)
    p.add_argument("--prefix-opt", action="store_true", default=None,
                   help="also record OPT of every prefix (slow)")
    p.add_argument("--timing", action="store_true", default=None,
                   help="record wall times (outputs are then not byte-reproducible)")
    p.add_argument("--workers", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="batch2online",
                                     description="Online learning by coreset resampling: experiments.")
    sub = parser.add_subparsers(dest="problem", required=True)
    for name in PROBLEMS:
        p = sub.add_parser(name)
        _add_common(p)
        if name == "sensitivity":
            p.add_argument("--sizes", type=int_list, help="dataset sizes, e.g. 4,8")
            p.add_argument("--estimator", choices=("exhaustive", "monte-carlo"))
            p.add_argument("--trials", type=int)
            p.add_argument("--m", type=int, help="draws per sample")
            p.add_argument("--profile", choices=("uniform", "norm"))
            p.add_argument("--sampler", choices=("coreset", "constant"))
            p.add_argument("--with-weights", action="store_true", default=None)
    return parser


def config_from_args(args):
    values = {k: v for k, v in vars(args).items() if k != "config" and v is not None}
    if args.config:
        return ExperimentConfig.from_json(args.config, **values)
    return ExperimentConfig.from_dict(values)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    result = {k: v for k, v in result.items() if k != "config"}
    json.dump(result, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
