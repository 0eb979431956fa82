"""Command-line interface: run / sweep / median / chaos / verify."""

from __future__ import annotations

import argparse
import os
import sys

from .config import load_config


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="medianflow",
        description="Pseudo-spectral scalar transport driven by 2D stochastic Navier-Stokes",
    )
    sub = p.add_subparsers(dest="command", required=True)
    for name, needs_config in (
        ("run", True), ("sweep", True), ("median", True), ("chaos", True), ("verify", False),
    ):
        sp = sub.add_parser(name)
        if needs_config:
            sp.add_argument("config", help="path to a flat key-value config file")
            sp.add_argument("--seed", type=int, default=None, help="override noise.seed")
            sp.add_argument("--output-dir", default=None, help="override experiment.output_dir")
            sp.add_argument(
                "--threads", type=int, default=None,
                help="ensemble width only (falls back to MEDIANFLOW_THREADS)",
            )
        else:
            sp.add_argument("--full", action="store_true", help="run the larger battery")
    return p


def _resolve_threads(args, cfg):
    if getattr(args, "threads", None) is not None:
        return args.threads
    env = os.environ.get("MEDIANFLOW_THREADS")
    if env:
        return int(env)
    return cfg["experiment.threads"]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "verify":
        from .verification import run_verification

        ok, checks = run_verification(fast=not args.full)
        for c in checks:
            print(c.line())
        print(f"{'ALL CHECKS PASSED' if ok else 'CHECKS FAILED'} "
              f"({sum(c.passed for c in checks)}/{len(checks)})")
        return 0 if ok else 1

    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["noise.seed"] = args.seed
    if args.output_dir is not None:
        overrides["experiment.output_dir"] = args.output_dir
    overrides["experiment.threads"] = _resolve_threads(args, cfg)
    cfg = cfg.with_overrides(**overrides)

    from . import runner

    if args.command == "run":
        records = runner.run_ensemble_records(cfg)
        for r in records:
            print(
                f"seed={r['seed']}: lambda_hat={r['lambda_hat']:.6g} "
                f"+- {r['lambda_stderr']:.2g}, final median {r['final_median']}"
            )
    elif args.command == "sweep":
        summary = runner.sweep(cfg)
        s = summary["slopes"]
        print(f"slope(-lambda vs kappa) = {s['neg_lambda_vs_kappa']['slope']:.4f}"
              f" +- {s['neg_lambda_vs_kappa']['stderr']:.4f}")
        print(f"slope(filament vs kappa) = {s['filament_vs_kappa']['slope']:.4f}"
              f" +- {s['filament_vs_kappa']['stderr']:.4f}")
    elif args.command == "median":
        summary = runner.median_experiment(cfg)
        for row in summary["per_M0"]:
            print(
                f"M0={row['M0']}: P(tau <= t*) = {row['p_hat']:.3f} "
                f"wilson [{row['wilson_low']:.3f}, {row['wilson_high']:.3f}], "
                f"mean median(end) = {row['mean_median_end']:.2f}, "
                f"eta within cap: {row['eta_within_cap']}"
            )
    elif args.command == "chaos":
        rows = runner.chaos_experiment(cfg)
        for r in rows:
            if r["ell"] == "total":
                print(
                    f"kappa={r['kappa']} M={r['M']}: closed={r['var_closed']:.6g} "
                    f"mc={r['var_mc']:.6g} +- {r['mc_stderr']:.2g} "
                    f"ratio={r['ratio_lower_bound']:.4g}"
                )
    return 0


if __name__ == "__main__":
    sys.exit(main())
