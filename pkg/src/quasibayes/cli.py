"""Command-line interface.

Subcommands:
  run        one Monte Carlo run for a (design, estimator) pair
  coverage   empirical coverage of credible sets for E[h(X)]
  table      replay a flat key=value config file, one run per section

Exit codes: 0 success, 1 run-level error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from .harness import (RunConfig, RunError, coverage_experiment, emit_results,
                      run_replications)

__all__ = ["main", "build_parser", "parse_config_file"]

_CONFIG_FIELDS = {
    "design": str, "variant": str, "estimator": str, "n": int, "K": int,
    "reps": int, "seed": int, "tau": float, "weighting": str,
    "explore_iters": int, "burnin": int, "draws": int, "thin": int,
    "inducing_cap": int, "explore_cap": int, "pilot_iters": int,
    "workers": int, "n_test": int, "out": str, "format": str,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quasibayes",
        description="Quasi-Bayes estimation for conditional moment "
                    "restriction models: Monte Carlo runs and coverage "
                    "experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p):
        p.add_argument("--design", required=True,
                       help='design name, e.g. "s" or "s-uni"')
        p.add_argument("--variant", choices=["uni", "multi"], default=None,
                       help="resolves a bare design name")
        p.add_argument("--estimator", default="qb_npiv",
                       choices=["qb_npiv", "qb_npqiv", "tsls", "ols_sieve"])
        p.add_argument("--n", type=int, default=1000)
        p.add_argument("--K", type=int, default=5,
                       help="first-stage dimension (J for tsls/ols_sieve)")
        p.add_argument("--reps", type=int, default=100)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.add_argument("--format", choices=["csv", "json"], default="csv")
        p.add_argument("--explore-iters", type=int, default=10_000)
        p.add_argument("--burnin", type=int, default=5_000)
        p.add_argument("--draws", type=int, default=10_000)
        p.add_argument("--tau", type=float, default=0.5)
        p.add_argument("--weighting", default="identity",
                       choices=["identity", "estimated", "continuous_update"])
        p.add_argument("--explore-cap", type=int, default=None)
        p.add_argument("--inducing-cap", type=int, default=2_000)
        p.add_argument("--workers", type=int, default=1)

    run_p = sub.add_parser("run", help="run one Monte Carlo configuration")
    add_run_flags(run_p)

    cov_p = sub.add_parser("coverage", help="credible-set coverage experiment")
    add_run_flags(cov_p)
    cov_p.add_argument("--gamma", type=float, default=0.1)
    cov_p.add_argument("--functional", choices=["mean"], default="mean",
                       help="linear functional of h (grid average)")
    cov_p.add_argument("--exogenous", action="store_true",
                       help="use W = X (strongly identified design)")

    tab_p = sub.add_parser("table", help="replay a config file of runs")
    tab_p.add_argument("config", help="flat key=value config file")
    tab_p.add_argument("--out", default=None,
                       help="output path prefix; each run appends its index")
    return parser


def _design_label(args) -> str:
    label = args.design
    if "-" not in label:
        if args.variant is None:
            raise ValueError("bare design name needs --variant")
        label = f"{label}-{args.variant}"
    return label


def _config_from_args(args) -> RunConfig:
    return RunConfig(
        design=_design_label(args), estimator=args.estimator, n=args.n,
        K=args.K, replications=args.reps, seed=args.seed, tau=args.tau,
        weighting=args.weighting, explore_iters=args.explore_iters,
        burnin=args.burnin, draws=args.draws,
        inducing_cap=args.inducing_cap, explore_cap=args.explore_cap,
        workers=args.workers)


def parse_config_file(path) -> list[dict]:
    """Parse a flat key=value file; blank lines separate runs.

    Lines starting with '#' are comments. Returns one dict per run.
    """
    runs: list[dict] = []
    current: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                if current:
                    runs.append(current)
                    current = {}
                continue
            if line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in _CONFIG_FIELDS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            current[key] = _CONFIG_FIELDS[key](value)
    if current:
        runs.append(current)
    if not runs:
        raise ValueError(f"{path}: no runs configured")
    return runs


def _config_from_dict(entry: dict) -> tuple[RunConfig, Optional[str], str]:
    entry = dict(entry)
    design = entry.pop("design")
    variant = entry.pop("variant", None)
    if "-" not in design:
        if variant is None:
            raise ValueError(f"design {design!r} needs a variant")
        design = f"{design}-{variant}"
    out = entry.pop("out", None)
    fmt = entry.pop("format", "csv")
    if "reps" in entry:
        entry["replications"] = entry.pop("reps")
    return RunConfig(design=design, **entry), out, fmt


def _emit(report, fmt: str, out: Optional[str]) -> None:
    if out is None:
        import os
        import tempfile
        fd, tmp = tempfile.mkstemp(suffix=f".{fmt}")
        os.close(fd)
        try:
            emit_results(report, fmt, tmp)
            with open(tmp) as fh:
                sys.stdout.write(fh.read())
        finally:
            os.unlink(tmp)
    else:
        emit_results(report, fmt, out)


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command in ("run", "coverage"):
            config = _config_from_args(args)
            if args.command == "coverage" and not 0.0 < args.gamma < 1.0:
                raise ValueError("gamma must lie in (0, 1)")
        else:  # table
            entries = parse_config_file(args.config)
            configs = [_config_from_dict(e) for e in entries]
    except (OSError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "run":
            report = run_replications(config)
            _emit(report, args.format, args.out)
        elif args.command == "coverage":
            report = coverage_experiment(config, functional_weights=None,
                                         gamma=args.gamma,
                                         exogenous=args.exogenous)
            line = (f"gamma={args.gamma} replications={report.replications} "
                    f"hits={report.hits} failures={report.failures} "
                    f"coverage={report.coverage:.4f}")
            if args.out is None:
                print(line)
            else:
                with open(args.out, "w") as fh:
                    fh.write(line + "\n")
        else:  # table
            for i, (config, out, fmt) in enumerate(configs):
                report = run_replications(config)
                if out is None and args.out is not None:
                    out = f"{args.out}.{i}.{fmt}"
                _emit(report, fmt, out)
    except RunError as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
