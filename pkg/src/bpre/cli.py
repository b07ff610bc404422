"""Command-line front end: one subcommand per experiment.

Exit codes: 0 success, 2 configuration problem, 3 estimator failure.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .errors import BpreError, ParseError, ValidationError
from .harness import EXPERIMENTS, RunConfig, parse_config, run

_HELP = {
    "validate": "check the model and print its derived constants",
    "survival": "cross-check survival estimators at the given horizons",
    "walk-diag": "boundary functionals and double-jump mass of the walk",
    "c0": "the survival constant by direct normalization and by series",
    "yaglom": "conditional-law transform on an 11-point grid",
    "bigjump": "first-jump index law and jump-size fluctuations",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bpre",
        description="Estimators for subcritical branching in a heavy-tailed "
                    "random environment.")
    sub = p.add_subparsers(dest="experiment", required=True,
                           metavar="|".join(EXPERIMENTS))
    for name in EXPERIMENTS:
        q = sub.add_parser(name, help=_HELP[name])
        q.add_argument("--config", metavar="PATH",
                       help="TOML run config; flags below override it")
        q.add_argument("--seed", type=int, help="64-bit unsigned run seed")
        q.add_argument("--samples", type=int, help="Monte Carlo budget")
        q.add_argument("--n", type=int, action="append", metavar="N",
                       help="horizon; repeat for a sweep")
        q.add_argument("--batches", type=int,
                       help="worker split; cannot change any estimate")
        q.add_argument("--out", metavar="DIR",
                       help="write results.jsonl and summary.csv here")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            with open(args.config, encoding="utf-8") as f:
                cfg = parse_config(f.read(), experiment=args.experiment)
        else:
            cfg = RunConfig(experiment=args.experiment)
        overrides = {}
        for key in ("seed", "samples", "batches"):
            val = getattr(args, key)
            if val is not None:
                overrides[key] = val
        if args.n:
            overrides["n_list"] = tuple(args.n)
        if args.out:
            overrides["out_dir"] = args.out
        if overrides:
            cfg = replace(cfg, **overrides)
    except (ParseError, ValidationError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        result = run(cfg)
    except BpreError as exc:
        print(f"estimator error: {exc}", file=sys.stderr)
        return 3

    for rec in result.records:
        if "method" in rec:
            n = rec["n"]
            tag = f"  n={n}" if n is not None else ""
            print(f"{rec['method']:<22s}{tag:>8s}  "
                  f"{rec['value']:.6g} +- {rec['stderr']:.3g}")
        elif rec.get("type") == "model":
            for key, val in rec.items():
                if key != "type":
                    print(f"{key} = {val}")
    if cfg.out_dir:
        print(f"wrote {cfg.out_dir}/results.jsonl and summary.csv "
              f"[config {result.config_hash}]")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
