"""Command-line entry point: ``linpool {simulate,pool,shrink,backtest,sscm-diag}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure, 1 any other package error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import (
    BacktestSection,
    PoolSection,
    ShrinkConfig,
    SimulateConfig,
    SscmDiagConfig,
    bundled_configs,
    load_config,
)
from .dataset import ClassCollection, Dataset
from .errors import ConfigError, DataError, LinpoolError, ShapeError
from .matrixio import read_matrix_csv, write_matrix_csv
from .models import CovarianceModel
from .multitarget import TargetSpec, multitarget_pool
from .pooling import CoefficientSet, pool
from .portfolio import BacktestConfig, backtest, ingest_prices, write_daily_returns, write_report
from .simulator import (
    ExperimentSpec,
    complex_ar1_spec,
    run_nmse,
    run_sscm_asymptotics,
    table1_spec,
    varying_k_spec,
)

log = logging.getLogger("linpool")


def _workers(cfg_workers: int, threads: int | None) -> int:
    """``--threads`` overrides the configured worker count."""
    return cfg_workers if threads is None else max(1, threads)


def _experiment(cfg: SimulateConfig, workers: int) -> ExperimentSpec:
    est = tuple(cfg.estimators) if cfg.estimators else None
    if cfg.setup.startswith("table1_"):
        kw = {"estimators": est} if est else {}
        return table1_spec(cfg.setup.split("_", 1)[1], cfg.trials, cfg.seed, workers=workers, **kw)
    if cfg.setup == "varying_k":
        spec = varying_k_spec(cfg.K, cfg.trials, cfg.seed, n=cfg.n or 40, workers=workers)
        if est:
            spec = ExperimentSpec(spec.class_laws, spec.sample_sizes, spec.trials, est, spec.mean_mode, spec.seed, workers, spec.name)
        return spec
    if cfg.setup == "complex_ar1":
        kw = {"estimators": est} if est else {}
        return complex_ar1_spec(cfg.n, cfg.trials, cfg.seed, workers=workers, **kw)
    laws = [c.law() for c in cfg.classes]
    sizes = [c.n for c in cfg.classes]
    return ExperimentSpec(laws, sizes, cfg.trials, est or ("scm", "linpool", "linpool_c"), cfg.mean_mode, cfg.seed, workers, "custom")


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, SimulateConfig)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    if args.trials is not None:
        cfg = cfg.model_copy(update={"trials": args.trials})
    spec = _experiment(cfg, _workers(cfg.workers, args.threads))
    table = run_nmse(spec)
    text = table.to_csv(args.output)
    if args.long_output:
        table.to_long_csv(args.long_output)
    if table.failed:
        log.warning("%d of %d trials failed", table.failed, spec.trials)
    if args.output is None:
        sys.stdout.write(text)
    return 0


def _read_dataset(path: str) -> Dataset:
    return Dataset(read_matrix_csv(path))


def _coefficient_rows(coefs: CoefficientSet) -> list[list[str]]:
    K = coefs.K
    names = [f"S_{j + 1}" for j in range(K)] + (["I"] if coefs.with_identity else [])
    rows = [["weight", *[f"class_{k + 1}" for k in range(K)]]]
    for i, nm in enumerate(names):
        rows.append([nm, *[format(float(coefs.weights[i, k]), ".17g") for k in range(K)]])
    rows.append(["used_qp_fallback", *[str(bool(f)).lower() for f in coefs.used_qp_fallback]])
    return rows


def _write_rows(path: Path, rows: list[list[str]]) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def cmd_pool(args: argparse.Namespace) -> int:
    section = load_config(args.config, PoolSection) if args.config else PoolSection()
    datasets = [_read_dataset(p) for p in args.data]
    dims = [d.p for d in datasets]
    if len(set(dims)) != 1:
        listing = ", ".join(f"{p} (p={d})" for p, d in zip(args.data, dims))
        raise ShapeError(f"input files have different dimensions: {listing}")
    res = pool(ClassCollection(tuple(datasets)), section.build(), approximate=section.approximate)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, est in enumerate(res.estimates):
        write_matrix_csv(out / f"class_{k + 1}.csv", est)
    _write_rows(out / "coefficients.csv", _coefficient_rows(res.coefficients))
    return 0


def cmd_shrink(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, ShrinkConfig)
    data = _read_dataset(args.data)
    if data.is_complex:
        raise DataError("multi-target shrinkage supports real data only")
    targets = []
    for t in cfg.targets:
        matrix = read_matrix_csv(t.matrix_path) if t.kind == "explicit" and t.matrix_path else None
        if t.kind == "explicit" and matrix is None:
            raise ConfigError("explicit target needs 'matrix_path'")
        targets.append(TargetSpec(t.kind, matrix, t.samples))
    target_data = Dataset(data.X[-cfg.target_rows :]) if cfg.target_rows else None
    seed = cfg.seed if args.seed is None else args.seed
    res = multitarget_pool(data, targets, cfg.pooling.build(), np.random.SeedSequence(seed), target_data)
    write_matrix_csv(args.output, res.estimate)
    if args.coefficients:
        names = ["S", *[t.kind for t in cfg.targets], "I"]
        rows = [["weight", "value"]] + [[nm, format(float(w), ".17g")] for nm, w in zip(names, res.weights)]
        _write_rows(Path(args.coefficients), rows)
    return 0


def cmd_backtest(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, BacktestSection)
    panel = ingest_prices(args.prices)
    workers = _workers(cfg.workers, args.threads)
    seed = cfg.seed if args.seed is None else args.seed
    reports = []
    for est in cfg.estimators:
        for n in cfg.windows:
            if n >= panel.T - 1:
                raise DataError(f"window n={n} needs more than {n + 1} return rows; panel has {panel.T}")
            bc = BacktestConfig(
                window=n,
                estimator=est,
                rebalance=cfg.rebalance,
                constrained=cfg.constrained,
                max_weight=cfg.max_weight,
                annualization=cfg.annualization,
                target_window=cfg.target_window,
                samples=cfg.samples,
                identity_lower_bound=cfg.identity_lower_bound,
                seed=seed,
                workers=workers,
            )
            reports.append(backtest(panel, bc))
    if args.output:
        write_report(reports, args.output)
    else:
        write_report(reports, sys.stdout)
    if args.returns_output:
        if len(reports) != 1:
            raise ConfigError("--returns-output needs exactly one (estimator, window) pair")
        write_daily_returns(reports[0], args.returns_output)
    return 0


def cmd_sscm_diag(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, SscmDiagConfig) if args.config else SscmDiagConfig()
    seed = cfg.seed if args.seed is None else args.seed

    def model(p: int) -> CovarianceModel:
        return getattr(CovarianceModel, cfg.kind)(p, cfg.rho, sigma2=cfg.sigma2)

    rows = run_sscm_asymptotics(model, cfg.p_list, cfg.trials, cfg.n, seed)
    fields = ["p", "n", "trials", "relative_bias", "bias_stderr", "raw_relative_bias", "scm_distance", "scm_distance_stderr"]
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([r.p, r.n, r.trials, *[format(getattr(r, f), ".6g") for f in fields[3:]]])
    finally:
        if args.output:
            out.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="linpool",
        description="Linear pooling of sample covariance matrices.",
        epilog=f"bundled configs: {', '.join(bundled_configs())}",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a Monte Carlo NMSE experiment")
    p.add_argument("--config", required=True, help="YAML file or bundled config name")
    p.add_argument("--output", "-o", help="wide NMSE table CSV (default: stdout)")
    p.add_argument("--long-output", help="long-format CSV for plotting")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--trials", type=int, help="override the number of trials")
    p.add_argument("--threads", type=int, help="worker threads (overrides the config)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pool", help="pool the SCMs of K class data files")
    p.add_argument("data", nargs="+", help="one n_k x p CSV per class")
    p.add_argument("--config", help="YAML pooling config (default: nonneg_identity)")
    p.add_argument("--output-dir", "-o", required=True, help="directory for class_k.csv and coefficients.csv")
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("shrink", help="multi-target shrinkage of a single dataset")
    p.add_argument("data", help="n x p CSV")
    p.add_argument("--config", required=True, help="YAML shrink config")
    p.add_argument("--output", "-o", required=True, help="estimated covariance CSV")
    p.add_argument("--coefficients", help="CSV of the fitted weights")
    p.add_argument("--seed", type=int, help="override the surrogate seed")
    p.set_defaults(func=cmd_shrink)

    p = sub.add_parser("backtest", help="sliding-window GMVP backtest on a price CSV")
    p.add_argument("prices", help="CSV with header date,TICKER1,...")
    p.add_argument("--config", required=True, help="YAML backtest config")
    p.add_argument("--output", "-o", help="risk report CSV (default: stdout)")
    p.add_argument("--returns-output", help="daily out-of-sample portfolio returns CSV")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, help="worker threads (overrides the config)")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("sscm-diag", help="SSCM bias and SCM distance across dimensions")
    p.add_argument("--config", help="YAML diagnostics config")
    p.add_argument("--output", "-o", help="CSV output (default: stdout)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_sscm_diag)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except LinpoolError as exc:
        print(f"linpool {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
