"""Config-driven experiment runners emitting CSV result tables.

Every output CSV gets a metadata sidecar (``<name>.csv.meta``) carrying the
config hash, the seed, and the grid definitions, so runs are traceable and
byte-reproducible. Timing columns are the one exception to byte
reproducibility and are confined to the scalability and bin-sweep tables.
"""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .alloc import make_problem, solve_bnb, solve_greedy
from .datagen import (
    CovariateTable,
    CONTINUOUS_COLS,
    Dataset,
    GenConfig,
    generate_dataset,
    load_covariates,
    synth_covariates,
)
from .estimators import (
    RfConfig,
    cade_matrix,
    cross_validate_rf,
    fit_binned_slearner,
    fit_rf_slearner,
    mise,
    oracle_estimator,
)
from .metrics import ValueCurve, auuc, fairness_report, solve_exact, value_curve


class ConfigError(ValueError):
    """Raised for unknown keys or malformed values in experiment configs."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment configuration; every field maps to one config-file key."""

    data: str = "synthetic:747"
    seed: int = 0
    subsample: int = 0
    delta: int = 10
    treatment_noise_variance: float = 0.25
    outcome_noise_variance: float = 0.25
    gamma: float = 0.0
    gamma_scale: float = 0.1
    protected_feature: int = 7
    estimators: tuple[str, ...] = ("rf", "binned", "oracle")
    estimator: str = "oracle"
    rf_trees: tuple[int, ...] = (200,)
    rf_max_depth: tuple[int | None, ...] = (15,)
    rf_min_samples_leaf: tuple[int, ...] = (2,)
    rf_feature_subsample: str = "sqrt"
    cv_folds: int = 0
    binned_bins: int = 10
    binned_neighbors: int = 10
    budgets: tuple[float, ...] = tuple(float(b) for b in range(25, 251, 25))
    auuc_caps: tuple[float, ...] = (140.0, 250.0)
    auuc_step: float = 10.0
    eps_dt_grid: tuple[float, ...] = (0.0, 0.25, 0.5, 1.0)
    eps_do_grid: tuple[float, ...] = (0.0, 0.25, 0.5, 1.0)
    gammas: tuple[float, ...] = (0.0, 1.0, 5.0, 10.0)
    benefits: str = "uniform:0.5:1.5"
    factors: tuple[int, ...] = (1, 2, 4, 8)
    exact_max_factor: int = 1
    sweep_deltas: tuple[int, ...] = (1, 2, 5, 10)
    sweep_budget: float = 140.0
    bnb_node_limit: int = 1_000_000

    def __post_init__(self):
        if self.delta < 1:
            raise ConfigError("delta must be >= 1")
        if any(b <= a for a, b in zip(self.budgets, self.budgets[1:])):
            raise ConfigError("budgets must be strictly ascending")
        for eps in self.eps_dt_grid + self.eps_do_grid:
            if not 0.0 <= eps <= 1.0:
                raise ConfigError("fairness slack grids must lie in [0, 1]")


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v.strip()) for v in text.split(",") if v.strip())


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v.strip()) for v in text.split(",") if v.strip())


def _parse_depths(text: str) -> tuple[int | None, ...]:
    out = []
    for v in text.split(","):
        v = v.strip()
        if not v:
            continue
        out.append(None if v.lower() == "none" else int(v))
    return tuple(out)


def _parse_range_or_list(text: str) -> tuple[float, ...]:
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        vals, b = [], start
        while b <= stop + 1e-9:
            vals.append(round(b, 10))
            b += step
        return tuple(vals)
    return _parse_float_list(text)


_PARSERS = {
    "data": str,
    "seed": int,
    "subsample": int,
    "delta": int,
    "treatment_noise_variance": float,
    "outcome_noise_variance": float,
    "gamma": float,
    "gamma_scale": float,
    "protected_feature": int,
    "estimators": lambda s: tuple(v.strip() for v in s.split(",") if v.strip()),
    "estimator": str,
    "rf_trees": _parse_int_list,
    "rf_max_depth": _parse_depths,
    "rf_min_samples_leaf": _parse_int_list,
    "rf_feature_subsample": str,
    "cv_folds": int,
    "binned_bins": int,
    "binned_neighbors": int,
    "budgets": _parse_range_or_list,
    "auuc_caps": _parse_float_list,
    "auuc_step": float,
    "eps_dt_grid": _parse_float_list,
    "eps_do_grid": _parse_float_list,
    "gammas": _parse_float_list,
    "benefits": str,
    "factors": _parse_int_list,
    "exact_max_factor": int,
    "sweep_deltas": _parse_int_list,
    "sweep_budget": float,
    "bnb_node_limit": int,
}


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines; '#' starts a comment; unknown keys fail."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _PARSERS[key](val.strip())
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return ExperimentConfig(**values)


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def config_lines(cfg: ExperimentConfig) -> list[str]:
    """Canonical key = value lines for every field, defaults included."""
    out = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join("none" if e is None else str(e) for e in v)
        out.append(f"{f.name} = {v}")
    return out


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256("\n".join(config_lines(cfg)).encode()).hexdigest()[:16]


def write_sidecar(csv_path: Path, cfg: ExperimentConfig, extra: dict | None = None) -> None:
    lines = [f"config_hash = {config_hash(cfg)}"] + config_lines(cfg)
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    Path(str(csv_path) + ".meta").write_text("\n".join(lines) + "\n")


def _write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(v: float) -> str:
    return repr(float(v))


def dataset_from_config(cfg: ExperimentConfig) -> tuple[Dataset, object]:
    """Build the experiment dataset; optional deterministic row subsample."""
    kind, _, arg = cfg.data.partition(":")
    if kind == "synthetic":
        cov = synth_covariates(int(arg or 747), seed=cfg.seed)
    elif kind == "csv":
        if not arg:
            raise ConfigError("data = csv:<path> requires a path")
        cov = load_covariates(arg)
    else:
        raise ConfigError(f"unknown data source {cfg.data!r}")
    if cfg.subsample and cfg.subsample < cov.n:
        rng = np.random.default_rng([cfg.seed, 11])
        keep = np.sort(rng.choice(cov.n, size=cfg.subsample, replace=False))
        cov = CovariateTable(features=cov.features[keep])
    gen = GenConfig(
        seed=cfg.seed,
        treatment_noise_variance=cfg.treatment_noise_variance,
        outcome_noise_variance=cfg.outcome_noise_variance,
        gamma=cfg.gamma,
        gamma_scale=cfg.gamma_scale,
        protected_feature=cfg.protected_feature,
    )
    return generate_dataset(cov, gen)


def rf_grid(cfg: ExperimentConfig) -> list[RfConfig]:
    return [
        RfConfig(
            n_trees=t,
            max_depth=d,
            min_samples_leaf=leaf,
            feature_subsample=cfg.rf_feature_subsample,
            seed=cfg.seed,
        )
        for t in cfg.rf_trees
        for d in cfg.rf_max_depth
        for leaf in cfg.rf_min_samples_leaf
    ]


def build_estimator(name: str, cfg: ExperimentConfig, ds: Dataset, gt) -> object:
    if name == "oracle":
        return oracle_estimator(gt)
    if name == "rf":
        grid = rf_grid(cfg)
        if len(grid) > 1 and cfg.cv_folds >= 2:
            best = cross_validate_rf(ds, grid, folds=cfg.cv_folds, seed=cfg.seed)
        else:
            best = grid[0]
        return fit_rf_slearner(ds, best)
    if name == "binned":
        return fit_binned_slearner(ds, dose_bins=cfg.binned_bins, k=cfg.binned_neighbors)
    raise ConfigError(f"unknown estimator {name!r}")


def benefit_vector(cfg: ExperimentConfig, n: int) -> np.ndarray:
    spec = cfg.benefits
    if spec == "ones":
        return np.ones(n)
    if spec.startswith("uniform:"):
        _, lo, hi = spec.split(":")
        rng = np.random.default_rng([cfg.seed, 13])
        return rng.uniform(float(lo), float(hi), size=n)
    raise ConfigError(f"unknown benefit spec {spec!r}")


def _area_grid(cfg: ExperimentConfig) -> np.ndarray:
    cap = max(cfg.auuc_caps)
    step = cfg.auuc_step
    for c in cfg.auuc_caps:
        if abs(c / step - round(c / step)) > 1e-9:
            raise ConfigError("every auuc cap must be a multiple of auuc_step")
    return np.arange(1, int(round(cap / step)) + 1) * step


def _slice_curve(curve: ValueCurve, cap: float) -> ValueCurve:
    mask = curve.budgets <= cap + 1e-9
    return ValueCurve(curve.budgets[mask], curve.values[mask], curve.provenance)


# ---------------------------------------------------------------------------
# experiment 1: estimator comparison
# ---------------------------------------------------------------------------

def run_exp1(cfg: ExperimentConfig, out_dir: str | Path) -> Path:
    """MISE plus normalized curve areas per estimator, greedy and exact.

    Areas are normalized per allocation method: each method's curve under an
    estimator is divided by the same method's full-information curve, so the
    oracle row reads 1.0 in every column by construction.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds, gt = dataset_from_config(cfg)
    true_cade = cade_matrix(oracle_estimator(gt), ds, cfg.delta)
    grid = _area_grid(cfg)

    opt_curves = {
        solver: value_curve(
            make_problem(true_cade, budget=0.0, groups=ds.protected), grid, solver=solver
        )
        for solver in ("greedy", "exact")
    }

    rows = []
    for name in cfg.estimators:
        est = build_estimator(name, cfg, ds, gt)
        est_cade = cade_matrix(est, ds, cfg.delta)
        row = [name, _fmt(mise(est, gt, ds))]
        for cap in cfg.auuc_caps:
            for solver in ("greedy", "exact"):
                presc = value_curve(
                    make_problem(est_cade, budget=0.0, groups=ds.protected),
                    grid,
                    solver=solver,
                    evaluation=true_cade,
                )
                row.append(
                    _fmt(auuc(_slice_curve(presc, cap), _slice_curve(opt_curves[solver], cap)))
                )
        rows.append(row)

    header = ["estimator", "mise"]
    for cap in cfg.auuc_caps:
        for solver in ("greedy", "exact"):
            header.append(f"auuc_{cap:g}_{solver}")
    path = out_dir / "exp1_results.csv"
    _write_csv(path, header, rows)
    write_sidecar(path, cfg, {"area_grid": ",".join(str(b) for b in grid)})
    return path


# ---------------------------------------------------------------------------
# experiment 2: fairness trade-offs
# ---------------------------------------------------------------------------

def run_exp2(cfg: ExperimentConfig, out_dir: str | Path) -> list[Path]:
    """Sweep the fairness slack grid (per gamma); report value and disparities.

    The objective column is the prescribed-value curve averaged over the
    budget grid, each budget normalized by the unconstrained full-information
    optimum at that budget. Disparity columns are averages over budgets.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for gamma in cfg.gammas:
        gcfg = replace(cfg, gamma=gamma)
        ds, gt = dataset_from_config(gcfg)
        true_cade = cade_matrix(oracle_estimator(gt), ds, cfg.delta)
        est = build_estimator(cfg.estimator, gcfg, ds, gt)
        est_cade = cade_matrix(est, ds, cfg.delta)

        opt_values = {
            b: solve_exact(
                make_problem(true_cade, budget=b, groups=ds.protected)
            ).objective
            for b in cfg.budgets
        }
        rows = []
        for eps_dt in cfg.eps_dt_grid:
            for eps_do in cfg.eps_do_grid:
                normed, reps_est, reps_true = [], [], []
                for b in cfg.budgets:
                    prob = make_problem(
                        est_cade,
                        budget=b,
                        groups=ds.protected,
                        eps_dt=eps_dt,
                        eps_do=eps_do,
                    )
                    report = solve_bnb(prob, node_limit=cfg.bnb_node_limit)
                    if report.status != "optimal":
                        raise RuntimeError(
                            f"cell eps_dt={eps_dt} eps_do={eps_do} budget={b}: "
                            f"solver stopped with status {report.status} "
                            f"(bound {report.best_bound}); raise bnb_node_limit "
                            f"or relax the grid"
                        )
                    presc = float(
                        np.sum(report.policy.matrix * true_cade.values)
                    )
                    denom = opt_values[b]
                    normed.append(presc / denom if denom != 0 else 0.0)
                    reps_est.append(fairness_report(report.policy, est_cade, ds.protected))
                    reps_true.append(fairness_report(report.policy, true_cade, ds.protected))
                rows.append(
                    [
                        _fmt(eps_dt),
                        _fmt(eps_do),
                        _fmt(np.mean([r.mean_dose_g0 for r in reps_est])),
                        _fmt(np.mean([r.mean_dose_g1 for r in reps_est])),
                        _fmt(np.mean([r.mean_gain_g0 for r in reps_est])),
                        _fmt(np.mean([r.mean_gain_g1 for r in reps_est])),
                        _fmt(np.mean([r.mean_gain_g0 for r in reps_true])),
                        _fmt(np.mean([r.mean_gain_g1 for r in reps_true])),
                        _fmt(np.mean(normed)),
                    ]
                )
        path = out_dir / f"exp2_gamma_{gamma:g}.csv"
        _write_csv(
            path,
            [
                "eps_dt",
                "eps_do",
                "mean_dose_g0",
                "mean_dose_g1",
                "outcome_g0_est",
                "outcome_g1_est",
                "outcome_g0_true",
                "outcome_g1_true",
                "objective",
            ],
            rows,
        )
        write_sidecar(path, gcfg, {"estimator_used": cfg.estimator})
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# experiment 3: cost-sensitive objectives
# ---------------------------------------------------------------------------

def run_exp3(cfg: ExperimentConfig, out_dir: str | Path) -> Path:
    """Uplift-optimal versus value-optimal policies across the budget grid."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds, gt = dataset_from_config(cfg)
    true_cade = cade_matrix(oracle_estimator(gt), ds, cfg.delta)
    est = build_estimator(cfg.estimator, cfg, ds, gt)
    est_cade = cade_matrix(est, ds, cfg.delta)
    benefits = benefit_vector(cfg, ds.n)

    rows = []
    for b in cfg.budgets:
        pol_u = solve_exact(make_problem(est_cade, budget=b, groups=ds.protected)).policy
        pol_v = solve_exact(
            make_problem(est_cade, budget=b, groups=ds.protected, benefits=benefits)
        ).policy
        gains_u = np.sum(pol_u.matrix * true_cade.values, axis=1)
        gains_v = np.sum(pol_v.matrix * true_cade.values, axis=1)
        rows.append(
            [
                _fmt(b),
                _fmt(gains_u.sum()),
                _fmt(float(gains_u @ benefits)),
                _fmt(gains_v.sum()),
                _fmt(float(gains_v @ benefits)),
            ]
        )
    path = Path(out_dir) / "exp3_results.csv"
    _write_csv(
        path,
        ["budget", "u_of_u_opt", "v_of_u_opt", "u_of_v_opt", "v_of_v_opt"],
        rows,
    )
    write_sidecar(path, cfg, {"benefit_spec": cfg.benefits})
    return path


# ---------------------------------------------------------------------------
# scalability
# ---------------------------------------------------------------------------

def oversample_covariates(
    cov: CovariateTable, factor: int, seed: int, jitter: float = 0.01
) -> CovariateTable:
    """Original rows plus (factor-1)*n resampled rows with jittered continuous
    features; binary columns are resampled unchanged."""
    if factor < 1:
        raise ConfigError("oversampling factor must be >= 1")
    if factor == 1:
        return cov
    rng = np.random.default_rng([seed, 19, factor])
    extra_idx = rng.integers(0, cov.n, size=(factor - 1) * cov.n)
    extra = cov.features[extra_idx].copy()
    cols = list(CONTINUOUS_COLS)
    extra[:, cols] += rng.normal(0.0, jitter, size=(extra.shape[0], len(cols)))
    return CovariateTable(features=np.vstack([cov.features, extra]))


def run_scalability(
    cfg: ExperimentConfig, out_dir: str | Path, factors: tuple[int, ...] | None = None
) -> Path:
    """Wall times of the heuristic versus the exact solver on scaled instances.

    The budget scales with the oversampling factor. The exact branch-and-bound
    runs only up to ``exact_max_factor``; the heuristic runs everywhere.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    factors = factors or cfg.factors
    base_ds, _ = dataset_from_config(cfg)
    base_cov = base_ds.covariates

    gen = GenConfig(
        seed=cfg.seed,
        treatment_noise_variance=cfg.treatment_noise_variance,
        outcome_noise_variance=cfg.outcome_noise_variance,
        gamma=cfg.gamma,
        gamma_scale=cfg.gamma_scale,
        protected_feature=cfg.protected_feature,
    )
    rows = []
    for factor in factors:
        cov = oversample_covariates(base_cov, factor, cfg.seed)
        ds, gt = generate_dataset(cov, gen)
        est = build_estimator(cfg.estimator, cfg, ds, gt)
        cade = cade_matrix(est, ds, cfg.delta)
        prob = make_problem(cade, budget=cfg.sweep_budget * factor, groups=ds.protected)
        greedy = solve_greedy(prob)
        row = [
            str(factor),
            str(ds.n),
            _fmt(greedy.wall_ms),
            _fmt(greedy.objective),
        ]
        if factor <= cfg.exact_max_factor:
            exact = solve_bnb(prob)
            row += [
                exact.status,
                str(exact.nodes),
                _fmt(exact.wall_ms),
                _fmt(exact.objective),
                _fmt(exact.best_bound),
            ]
        else:
            row += ["skipped", "", "", "", ""]
        rows.append(row)
    path = out_dir / "scalability_results.csv"
    _write_csv(
        path,
        [
            "factor",
            "n",
            "greedy_ms",
            "greedy_objective",
            "exact_status",
            "exact_nodes",
            "exact_ms",
            "exact_objective",
            "exact_bound",
        ],
        rows,
    )
    write_sidecar(path, cfg, {"factors": ",".join(str(f) for f in factors)})
    return path


# ---------------------------------------------------------------------------
# dose-bin sweep
# ---------------------------------------------------------------------------

def run_delta_sweep(
    cfg: ExperimentConfig, out_dir: str | Path, deltas: tuple[int, ...] | None = None
) -> Path:
    """Prescribed value and solve time at one budget across grid granularities."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    deltas = deltas or cfg.sweep_deltas
    ds, gt = dataset_from_config(cfg)
    rows = []
    for delta in deltas:
        est = build_estimator(cfg.estimator, cfg, ds, gt)
        est_cade = cade_matrix(est, ds, delta)
        true_cade = cade_matrix(oracle_estimator(gt), ds, delta)
        prob = make_problem(est_cade, budget=cfg.sweep_budget, groups=ds.protected)
        t0 = time.perf_counter()
        report = solve_exact(prob)
        wall_ms = (time.perf_counter() - t0) * 1e3
        presc = float(np.sum(report.policy.matrix * true_cade.values))
        rows.append([str(delta), _fmt(presc), _fmt(wall_ms)])
    path = out_dir / "delta_sweep_results.csv"
    _write_csv(path, ["delta", "u_presc", "wall_ms"], rows)
    write_sidecar(path, cfg, {"deltas": ",".join(str(d) for d in deltas)})
    return path
