"""Command-line entry points: data generation, fitting, allocation, experiments."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments
from .alloc import (
    REPORT_CSV_HEADER,
    load_problem,
    solve_bnb,
    solve_dp,
    solve_greedy,
)
from .datagen import (
    GenConfig,
    GroundTruth,
    generate_dataset,
    load_covariates,
    load_dataset,
    save_dataset,
    synth_covariates,
)
from .estimators import (
    RfConfig,
    cade_matrix,
    fit_binned_slearner,
    fit_rf_slearner,
    mise,
    oracle_estimator,
    save_cade_csv,
)
from .experiments import ExperimentConfig, load_config
from .metrics import solve_exact


def _add_data_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", help="covariate or dataset CSV path")
    src.add_argument("--synthetic", type=int, metavar="N", help="synthesize N covariate rows")


def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "data", None):
        cfg = replace(cfg, data=f"csv:{args.data}")
    if getattr(args, "synthetic", None):
        cfg = replace(cfg, data=f"synthetic:{args.synthetic}")
    return cfg


def _cmd_generate(args) -> int:
    if args.synthetic:
        cov = synth_covariates(args.synthetic, seed=args.seed)
    elif args.data:
        has_header = {"auto": None, "yes": True, "no": False}[args.header]
        cov = load_covariates(args.data, has_header=has_header)
    else:
        raise SystemExit("generate requires --data PATH or --synthetic N")
    gen = GenConfig(
        seed=args.seed,
        treatment_noise_variance=args.treatment_noise_variance,
        outcome_noise_variance=args.outcome_noise_variance,
        gamma=args.gamma,
        gamma_scale=args.gamma_scale,
        protected_feature=args.protected_feature,
    )
    ds, gt = generate_dataset(cov, gen)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out / "dataset.csv")
    (out / "groundtruth.json").write_text(gt.to_json())
    print(f"wrote {out}/dataset.csv ({ds.n} rows) and groundtruth.json")
    if gt.dose_guard_count or gt.outcome_guard_count:
        print(
            f"denominator guards applied: dose={gt.dose_guard_count} "
            f"outcome={gt.outcome_guard_count}"
        )
    return 0


def _cmd_fit(args) -> int:
    ds = load_dataset(args.data, protected_feature=args.protected_feature)
    gt = None
    if args.groundtruth:
        gt = GroundTruth.from_json(Path(args.groundtruth).read_text())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.estimator == "oracle":
        if gt is None:
            raise SystemExit("--estimator oracle requires --groundtruth PATH")
        est = oracle_estimator(gt)
    elif args.estimator == "rf":
        cfg = RfConfig(
            n_trees=args.trees,
            max_depth=args.max_depth,
            min_samples_leaf=args.min_samples_leaf,
            feature_subsample=args.feature_subsample,
            seed=args.seed,
        )
        est = fit_rf_slearner(ds, cfg)
        (out / "model.json").write_text(est.forest.to_json())
    elif args.estimator == "binned":
        est = fit_binned_slearner(ds, dose_bins=args.bins, k=args.neighbors)
    else:
        raise SystemExit(f"unknown estimator {args.estimator!r}")

    matrix = cade_matrix(est, ds, args.delta)
    save_cade_csv(matrix, out / "cade.csv")
    print(f"wrote {out}/cade.csv ({matrix.n} x {matrix.delta + 1})")
    if gt is not None:
        print(f"mise = {mise(est, gt, ds):.6f}")
    return 0


def _cmd_allocate(args) -> int:
    prob = load_problem(args.problem)
    if args.budget is not None:
        prob = prob.with_budget(args.budget)
    solver = {
        "greedy": solve_greedy,
        "dp": solve_dp,
        "bnb": solve_bnb,
        "exact": solve_exact,
    }[args.solver]
    report = solver(prob)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "report.csv").open("w", newline="") as fh:
        fh.write(",".join(REPORT_CSV_HEADER) + "\n")
        fh.write(",".join(report.csv_row(prob.costs)) + "\n")
    with (out / "policy.csv").open("w", newline="") as fh:
        fh.write("entity,dose\n")
        doses = report.policy.doses(prob.cade.doses)
        for i, d in enumerate(doses):
            fh.write(f"{i},{float(d)!r}\n")
    print(
        f"{report.status}: objective {report.objective:.6f}, "
        f"nodes {report.nodes}, wall {report.wall_ms:.0f} ms"
    )
    return 0


def _cmd_exp1(args) -> int:
    path = experiments.run_exp1(_config_from_args(args), args.out)
    print(f"wrote {path}")
    return 0


def _cmd_exp2(args) -> int:
    for path in experiments.run_exp2(_config_from_args(args), args.out):
        print(f"wrote {path}")
    return 0


def _cmd_exp3(args) -> int:
    path = experiments.run_exp3(_config_from_args(args), args.out)
    print(f"wrote {path}")
    return 0


def _cmd_scalability(args) -> int:
    path = experiments.run_scalability(_config_from_args(args), args.out)
    print(f"wrote {path}")
    return 0


def _cmd_delta_sweep(args) -> int:
    path = experiments.run_delta_sweep(_config_from_args(args), args.out)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="doseuplift",
        description="Continuous-treatment uplift modeling and dose allocation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a semi-synthetic dataset")
    _add_data_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument(
        "--header", choices=["auto", "yes", "no"], default="auto",
        help="whether the covariate CSV has a header row",
    )
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--gamma-scale", type=float, default=0.1)
    p.add_argument("--protected-feature", type=int, default=7)
    p.add_argument("--treatment-noise-variance", type=float, default=0.25)
    p.add_argument("--outcome-noise-variance", type=float, default=0.25)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("fit", help="fit an estimator; export its dose-effect matrix")
    p.add_argument("--data", required=True, help="dataset CSV from `generate`")
    p.add_argument("--estimator", default="rf", choices=["rf", "binned", "oracle"])
    p.add_argument("--groundtruth", help="groundtruth.json (oracle, or to report error)")
    p.add_argument("--delta", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.add_argument("--protected-feature", type=int, default=7)
    p.add_argument("--trees", type=int, default=200)
    p.add_argument("--max-depth", type=int, default=15)
    p.add_argument("--min-samples-leaf", type=int, default=2)
    p.add_argument("--feature-subsample", default="sqrt")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--neighbors", type=int, default=10)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("allocate", help="solve a problem directory (cade/cost/meta)")
    p.add_argument("--problem", required=True, help="directory with cade.csv, cost.csv, meta.csv")
    p.add_argument("--solver", default="exact", choices=["greedy", "dp", "bnb", "exact"])
    p.add_argument("--budget", type=float, help="override the budget from meta.csv")
    p.add_argument("--out", default="out")
    p.set_defaults(func=_cmd_allocate)

    for name, func, help_text in (
        ("exp1", _cmd_exp1, "estimator comparison table"),
        ("exp2", _cmd_exp2, "fairness trade-off sweep"),
        ("exp3", _cmd_exp3, "cost-sensitive objective comparison"),
        ("scalability", _cmd_scalability, "heuristic vs exact runtime scaling"),
        ("delta-sweep", _cmd_delta_sweep, "dose-grid granularity sweep"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="experiment config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", default="out")
        _add_data_args(p)
        p.set_defaults(func=func)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:  # surface a diagnostic, not a traceback
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
