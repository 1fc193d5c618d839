"""Global minimum variance portfolios and a sliding-window backtest."""

from __future__ import annotations

import csv
import datetime as dt
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .dataset import Dataset
from .errors import ConditioningError, ConfigError, DataError, InfeasibleError
from .estimators import sample_covariance
from .models import as_generator
from .multitarget import TargetSpec, bartz_estimate, build_target, multitarget_pool
from .pooling import PoolingConfig
from .qp import QpProblem, solve_box_eq

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("estimator", "n", "realized_risk", "annualized_risk", "num_windows")


@dataclass(frozen=True, eq=False)
class ReturnsPanel:
    """Daily net returns, one row per date and one column per asset."""

    dates: tuple[str, ...]
    returns: np.ndarray
    tickers: tuple[str, ...]

    def __post_init__(self) -> None:
        R = np.asarray(self.returns, dtype=float)
        if R.ndim != 2 or R.shape != (len(self.dates), len(self.tickers)):
            raise DataError(
                f"returns shape {R.shape} does not match {len(self.dates)} dates x {len(self.tickers)} tickers"
            )
        if not np.all(np.isfinite(R)):
            raise DataError("returns contain non-finite values")
        R = R.copy()
        R.setflags(write=False)
        object.__setattr__(self, "returns", R)
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "tickers", tuple(self.tickers))

    @property
    def T(self) -> int:
        return self.returns.shape[0]

    @property
    def p(self) -> int:
        return self.returns.shape[1]


def _parse_price(tok: str) -> float:
    tok = tok.strip()
    if tok == "" or tok.lower() in ("nan", "na", "null"):
        return math.nan
    return float(tok)


def ingest_prices(path: str | Path | io.TextIOBase) -> ReturnsPanel:
    """Read a ``date,TICKER1,...`` price CSV and convert it to net returns.

    Rows with a missing or zero price are dropped (and the count logged);
    returns are then computed between consecutive surviving rows, so a
    dropped row yields one return spanning the gap.
    """
    if isinstance(path, (str, Path)):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        name = str(path)
    else:
        rows = list(csv.reader(path))
        name = "<stream>"
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{name}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0].lower() != "date":
        raise DataError(f"{name}: header must be 'date,TICKER1,...', got {rows[0]!r}")
    tickers = tuple(header[1:])
    dates: list[str] = []
    prices: list[list[float]] = []
    dropped = 0
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{name}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            d = dt.date.fromisoformat(row[0].strip())
            vals = [_parse_price(t) for t in row[1:]]
        except ValueError as exc:
            raise DataError(f"{name}:{lineno}: {exc}") from None
        if any(v < 0 for v in vals if not math.isnan(v)):
            raise DataError(f"{name}:{lineno}: negative price")
        if any(math.isnan(v) or v == 0 for v in vals):
            dropped += 1
            continue
        if dates and d.isoformat() <= dates[-1]:
            raise DataError(f"{name}:{lineno}: dates must be strictly increasing ({d} after {dates[-1]})")
        dates.append(d.isoformat())
        prices.append(vals)
    if dropped:
        log.warning("%s: dropped %d row(s) with missing or zero prices", name, dropped)
    if len(prices) < 2:
        raise DataError(f"{name}: need at least 2 valid price rows, got {len(prices)}")
    P = np.array(prices)
    return ReturnsPanel(tuple(dates[1:]), P[1:] / P[:-1] - 1.0, tickers)


def _ridged(cov: np.ndarray, ridge: bool) -> tuple[np.ndarray, float]:
    """Symmetrized ``cov`` and the ridge added to it (0 if none was needed)."""
    cov = (cov + cov.T) / 2
    w = np.linalg.eigvalsh(cov)
    if w[0] > 0 and w[-1] / w[0] <= 1e12:
        return cov, 0.0
    if not ridge:
        raise ConditioningError(f"covariance is singular or ill-conditioned (eigenvalues in [{w[0]:.3g}, {w[-1]:.3g}])")
    p = cov.shape[0]
    tr = float(np.trace(cov))
    eps = 1e-8 * tr / p if tr > 0 else 1e-8
    return cov + eps * np.eye(p), eps


def _gmvp(cov: np.ndarray, constrained: bool, max_weight: float, ridge: bool) -> tuple[np.ndarray, float]:
    cov = np.asarray(cov, dtype=float)
    p = cov.shape[0]
    if cov.ndim != 2 or cov.shape != (p, p):
        raise DataError(f"covariance must be square, got {cov.shape}")
    if constrained and max_weight * p < 1 - 1e-12:
        raise InfeasibleError(f"max_weight={max_weight} with p={p} cannot sum to one")
    S, eps = _ridged(cov, ridge)
    if not constrained:
        w = np.linalg.solve(S, np.ones(p))
        return w / w.sum(), eps
    res = solve_box_eq(QpProblem(S, np.zeros(p), lower=0.0, upper=max_weight, sum_eq=1.0))
    return np.clip(res.x, 0.0, max_weight), eps


def gmvp_weights(
    cov: np.ndarray,
    constrained: bool = False,
    max_weight: float = 0.1,
    ridge: bool = True,
) -> np.ndarray:
    """Global minimum variance weights.

    Unconstrained: ``S^{-1} 1 / (1' S^{-1} 1)``. Constrained: minimize
    ``w'Sw`` subject to ``sum(w) = 1`` and ``0 <= w <= max_weight``.

    Parameters
    ----------
    ridge : bool
        Add ``1e-8 tr(S)/p`` to the diagonal of a singular covariance (with
        a warning) instead of raising :class:`ConditioningError`.
    """
    w, eps = _gmvp(cov, constrained, max_weight, ridge)
    if eps:
        log.warning("singular covariance in GMVP; added ridge %.3g", eps)
    return w


# -- covariance estimators for the backtest ---------------------------------

Estimator = Callable[[Dataset, Dataset, np.random.Generator, "BacktestConfig"], np.ndarray]
_REGISTRY: dict[str, Estimator] = {}


def register_estimator(name: str, fn: Estimator) -> None:
    """Make ``fn(window, target_window, rng, config) -> covariance`` available by name."""
    _REGISTRY[name] = fn


def estimator_names() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def _market_targets(config: "BacktestConfig") -> list[TargetSpec]:
    return [TargetSpec("single_factor", samples=config.samples), TargetSpec("constant_correlation", samples=config.samples)]


def _scm(window, target_window, rng, config):
    return sample_covariance(window)


def _linpool(variant: str) -> Estimator:
    def fn(window, target_window, rng, config):
        cfg = PoolingConfig(variant, identity_lower_bound=config.identity_lower_bound)
        return multitarget_pool(window, _market_targets(config), cfg, rng, target_data=target_window).estimate

    return fn


def _bartz(window, target_window, rng, config):
    targets = [build_target(target_window, s) for s in _market_targets(config)] + [np.eye(window.p)]
    return bartz_estimate(window, targets).estimate


register_estimator("scm", _scm)
register_estimator("linpool", _linpool("nonneg_identity"))
register_estimator("linpool_c", _linpool("convex"))
register_estimator("bartz", _bartz)


@dataclass(frozen=True)
class BacktestConfig:
    """Sliding-window backtest settings.

    ``target_window`` is the number of most recent days used for building
    the shrinkage targets; it is capped at ``window`` (``None``: the whole
    estimation window).
    """

    window: int
    estimator: str = "linpool"
    rebalance: int = 20
    constrained: bool = False
    max_weight: float = 0.1
    annualization: float = math.sqrt(250)
    target_window: int | None = 40
    samples: int = 1000
    identity_lower_bound: float = 1e-8
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if self.window < 2:
            raise ConfigError(f"window must be at least 2, got {self.window}")
        if self.rebalance < 1:
            raise ConfigError(f"rebalance must be positive, got {self.rebalance}")
        if self.estimator not in _REGISTRY:
            raise ConfigError(f"unknown estimator {self.estimator!r}; available: {estimator_names()}")
        if self.target_window is not None and self.target_window < 2:
            raise ConfigError(f"target_window must be at least 2, got {self.target_window}")
        if not self.max_weight > 0:
            raise ConfigError(f"max_weight must be positive, got {self.max_weight}")
        if self.workers < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}")


@dataclass(frozen=True, eq=False)
class BacktestReport:
    estimator: str
    n: int
    realized_risk: float
    annualized_risk: float
    num_windows: int
    dates: tuple[str, ...]
    daily_returns: np.ndarray
    weights: np.ndarray = field(repr=False)
    """Weights per rebalance window, shape ``(num_windows, p)``."""

    def row(self) -> dict[str, str]:
        return {
            "estimator": self.estimator,
            "n": str(self.n),
            "realized_risk": format(self.realized_risk, ".10g"),
            "annualized_risk": format(self.annualized_risk, ".10g"),
            "num_windows": str(self.num_windows),
        }


def realized_risk(daily_returns: Sequence[float]) -> float:
    """Sample standard deviation (divisor ``T - 1``) of the daily portfolio returns."""
    r = np.asarray(daily_returns, dtype=float)
    if r.size < 2:
        raise DataError(f"need at least 2 out-of-sample returns, got {r.size}")
    return float(np.std(r, ddof=1))


def backtest(panel: ReturnsPanel, config: BacktestConfig) -> BacktestReport:
    """Rebalance every ``config.rebalance`` days on the previous ``window`` days.

    At each rebalance day ``t`` the covariance is estimated from rows
    ``[t - window, t)`` (targets from the last ``target_window`` of them),
    GMVP weights are formed and held over rows ``[t, t + rebalance)``.
    """
    n, T = config.window, panel.T
    if T <= n + 1:
        raise DataError(f"panel has {T} return rows; need more than window + 1 = {n + 1}")
    starts = list(range(n, T, config.rebalance))
    estimator = _REGISTRY[config.estimator]
    tw = min(config.target_window or n, n)

    def run(idx_t: tuple[int, int]) -> tuple[np.ndarray, float]:
        idx, t = idx_t
        window = Dataset(panel.returns[t - n : t])
        target_window = Dataset(panel.returns[t - tw : t])
        rng = as_generator(np.random.SeedSequence([config.seed, idx]))
        cov = estimator(window, target_window, rng, config)
        return _gmvp(np.real(cov), config.constrained, config.max_weight, ridge=True)

    jobs = list(enumerate(starts))
    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as ex:
            solved = list(ex.map(run, jobs))
    else:
        solved = [run(j) for j in jobs]
    weights = [w for w, _ in solved]
    ridged = sum(1 for _, eps in solved if eps)
    if ridged:
        log.warning("%s, n=%d: ridge added to a singular covariance in %d of %d windows",
                    config.estimator, n, ridged, len(solved))
    rets = np.concatenate(
        [panel.returns[t : min(t + config.rebalance, T)] @ w for t, w in zip(starts, weights)]
    )
    risk = realized_risk(rets)
    return BacktestReport(
        estimator=config.estimator,
        n=n,
        realized_risk=risk,
        annualized_risk=risk * config.annualization,
        num_windows=len(starts),
        dates=panel.dates[n:],
        daily_returns=rets,
        weights=np.array(weights),
    )


def write_report(reports: Iterable[BacktestReport], path: str | Path | io.TextIOBase) -> None:
    """Write the risk report CSV (``estimator,n,realized_risk,annualized_risk,num_windows``)."""
    def _write(fh):
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(r.row())

    if isinstance(path, (str, Path)):
        with open(path, "w", newline="") as fh:
            _write(fh)
    else:
        _write(path)


def write_daily_returns(report: BacktestReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "return"])
        for d, r in zip(report.dates, report.daily_returns):
            w.writerow([d, format(float(r), ".10g")])


def synthetic_panel(
    p: int,
    T: int,
    rng: np.random.Generator | np.random.SeedSequence | int | None = None,
    nu: float = 5.0,
    start: str = "2020-01-01",
) -> tuple[ReturnsPanel, np.ndarray]:
    """Heavy-tailed one-factor returns for experiments without market data.

    Returns the panel and its population covariance. Daily returns follow a
    multivariate t with ``nu`` degrees of freedom whose covariance is
    ``beta beta' s_m^2 + diag(s_e^2)``.
    """
    rng = as_generator(rng)
    beta = rng.normal(1.0, 0.3, size=p)
    s_m = 0.01
    s_e = rng.uniform(0.01, 0.03, size=p)
    cov = s_m**2 * np.outer(beta, beta) + np.diag(s_e**2)
    L = np.linalg.cholesky(cov)
    z = rng.standard_normal((T, p)) @ L.T
    w = rng.chisquare(nu, size=T) / (nu - 2)
    R = 2e-4 + z / np.sqrt(w)[:, None]
    day0 = dt.date.fromisoformat(start)
    dates = tuple((day0 + dt.timedelta(days=i)).isoformat() for i in range(T))
    tickers = tuple(f"A{i + 1:03d}" for i in range(p))
    return ReturnsPanel(dates, R, tickers), cov
