"""Command-line interface.

Subcommands: mean, linreg, krr, glm-logistic (run an experiment config),
rate-fit (log-log slope of a result file), audit (print a budget audit).
Exit codes: 0 success, 2 config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ldplearn import harness
from ldplearn.numerics import NumericalError
from ldplearn.privacy import BudgetAudit, ParameterError, PrivacyBudget

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _add_run_parser(sub, task: str):
    p = sub.add_parser(task, help=f"run a {task} experiment from a config file")
    p.add_argument("--config", required=True, help="INI experiment config")
    p.add_argument("--seed", type=int, default=None, help="override root seed")
    p.add_argument("--out", default=None, help="override output directory")
    p.add_argument(
        "--paper-exact",
        action="store_true",
        help="flip every convention switch to the source-text variant",
    )
    p.add_argument(
        "--test-mode",
        action="store_true",
        help="force noise scale to zero (no privacy guarantee)",
    )
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(prog="ldplearn")
    sub = parser.add_subparsers(dest="command", required=True)
    for task in ("mean", "linreg", "krr", "glm-logistic"):
        _add_run_parser(sub, task)

    p_fit = sub.add_parser("rate-fit", help="fit a log-log error-vs-n slope")
    p_fit.add_argument("input", help="result CSV produced by a run")
    p_fit.add_argument("--metric", default=None, help="restrict to one metric name")

    p_audit = sub.add_parser("audit", help="print the per-user budget audit for a config")
    p_audit.add_argument("--config", required=True)

    args = parser.parse_args(argv)
    try:
        if args.command in ("mean", "linreg", "krr", "glm-logistic"):
            overrides = {}
            if args.seed is not None:
                overrides["seed"] = args.seed
            if args.out is not None:
                overrides["out"] = Path(args.out)
            if args.paper_exact:
                overrides["paper_exact"] = True
            if args.test_mode:
                overrides["test_mode"] = True
            cfg = harness.load_config(args.config, overrides)
            if cfg.task != args.command:
                raise ParameterError(
                    f"config task {cfg.task!r} does not match subcommand {args.command!r}"
                )
            records = harness.run_experiment(cfg)
            print(f"{len(records)} records in {Path(cfg.out) / (cfg.task + '_results.csv')}")
        elif args.command == "rate-fit":
            slope, stderr = harness.rate_fit_csv(args.input, metric=args.metric)
            print(f"slope {slope:+.4f} +- {stderr:.4f}")
        elif args.command == "audit":
            cfg = harness.load_config(args.config)
            budget = PrivacyBudget(cfg.eps_grid[0], cfg.delta)
            audit = BudgetAudit(declared=budget)
            if cfg.task == "mean":
                audit.charge("projected-gaussian-report", budget)
            elif cfg.task in ("linreg", "krr"):
                audit.charge("feature", budget.split(0.5))
                audit.charge("label", budget.split(0.5))
            else:
                from ldplearn.glm import synopsis_budgets

                degree = int(cfg.params.get("p", 3))
                b0, by, b1 = synopsis_budgets(budget, degree)
                audit.charge("data-copy-z0", b0)
                audit.charge("label-copies", by, copies=degree + 1)
                if b1 is not None:
                    audit.charge("data-copies", b1, copies=degree * (degree + 1) // 2)
            audit.check()
            print(audit.to_json())
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
