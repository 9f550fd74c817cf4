"""Command-line experiment runner.

    invnav list
    invnav describe fig2-odometer
    invnav thm3-residual --seed 0,1,2 --out results/
    invnav fig3-convergence --steps 100000 --quiet

Artifacts (plot-ready CSVs), a flat summary.txt and a structured
checks.yaml land in the output directory (flag --out, else $INVNAV_OUT,
else ./invnav-out/<experiment>).  The exit status is nonzero iff any
acceptance check fails.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .experiments import (
    EXPERIMENTS,
    ExperimentSpec,
    UnknownExperiment,
    describe_experiment,
    list_experiments,
    run_experiment,
)
from .sim import ScenarioConfig


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from err
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="invnav",
        description="Reproducible estimation experiments for the planar "
                    "dead-reckoning-with-fixes problem.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("list", help="list the available experiments")

    p_desc = sub.add_parser("describe", help="describe one experiment")
    p_desc.add_argument("experiment")

    for name in list_experiments():
        p = sub.add_parser(name, help=EXPERIMENTS[name][1][:60] + "...")
        p.add_argument("--config", type=Path, default=None,
                       help="YAML scenario overrides")
        p.add_argument("--seed", type=_parse_seeds, default=[0],
                       help="seed or comma-separated seed list")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (default $INVNAV_OUT or ./invnav-out)")
        p.add_argument("--steps", type=int, default=None,
                       help="override the experiment's step count")
        p.add_argument("--quiet", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "list":
        for name in list_experiments():
            print(name)
        return 0

    if args.command == "describe":
        try:
            text = describe_experiment(args.experiment)
        except UnknownExperiment:
            print(f"unknown experiment: {args.experiment}", file=sys.stderr)
            return 2
        print(f"{args.experiment}\n    {text}")
        return 0

    out_root = args.out
    if out_root is None:
        env = os.environ.get("INVNAV_OUT")
        out_root = Path(env) if env else Path("invnav-out")
        out_root = out_root / args.command
    overrides = {}
    if args.config is not None:
        overrides = ScenarioConfig.from_yaml(args.config).__dict__

    spec = ExperimentSpec(
        name=args.command,
        out_dir=Path(out_root),
        seeds=list(args.seed),
        steps=args.steps,
        config_overrides=overrides,
        quiet=args.quiet,
    )
    result = run_experiment(spec)
    return 0 if result.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
