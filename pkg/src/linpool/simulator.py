"""Monte Carlo experiments: NMSE studies and SSCM asymptotics.

Every trial draws from its own stream spawned from the experiment seed, and
per-trial results are stored by trial index before aggregation with
``math.fsum``. Serial and threaded runs therefore give identical tables.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np
from scipy.integrate import quad

from .dataset import ClassCollection
from .errors import ConfigError, LinpoolError
from .estimators import PoolingStatistics, sample_covariance
from .models import CovarianceModel, EllipticalLaw, materialize, sample
from .multitarget import bartz_estimate
from .pooling import PoolingConfig, pool

log = logging.getLogger(__name__)

MeanMode = Literal["fixed", "resampled", "given"]
LawSource = Sequence[EllipticalLaw] | Callable[[np.random.Generator], Sequence[EllipticalLaw]]

ESTIMATORS: tuple[str, ...] = (
    "scm",
    "linpool",
    "linpool_c",
    "linpool_nonneg",
    "linpool_oracle",
    "bartz",
    "oracle",
)


def _linpool_variant(variant: str):
    def fn(classes, laws):
        return pool(classes, PoolingConfig(variant)).estimates

    return fn


def _linpool_oracle(classes, laws):
    stats = PoolingStatistics.from_population(
        [law.cov_matrix for law in laws],
        classes.sizes,
        [law.kurtosis for law in laws],
        "complex" if classes.is_complex else "real",
    )
    return pool(classes, PoolingConfig("nonneg_identity"), stats=stats).estimates


def _bartz(classes, laws):
    # other classes' SCMs plus the identity as targets for each class
    scms = [sample_covariance(d) for d in classes]
    eye = np.eye(classes.p)
    out = []
    for k, d in enumerate(classes):
        targets = [S for j, S in enumerate(scms) if j != k] + [eye]
        out.append(bartz_estimate(d, targets).estimate)
    return out


_RUNNERS: dict[str, Callable] = {
    "scm": lambda classes, laws: [sample_covariance(d) for d in classes],
    "linpool": _linpool_variant("nonneg_identity"),
    "linpool_c": _linpool_variant("convex"),
    "linpool_nonneg": _linpool_variant("nonneg"),
    "linpool_oracle": _linpool_oracle,
    "bartz": _bartz,
    "oracle": lambda classes, laws: [law.cov_matrix for law in laws],
}


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    """A Monte Carlo NMSE experiment.

    Parameters
    ----------
    class_laws : sequence of EllipticalLaw or callable
        The K class laws, or a function of the trial generator returning
        them (for parameters redrawn every trial).
    sample_sizes : sequence of int
        ``n_k`` per class.
    trials : int
    estimators : sequence of str
        Names from :data:`ESTIMATORS`.
    mean_mode : {"fixed", "resampled", "given"}
        ``fixed`` draws standard normal class means once and keeps them,
        ``resampled`` redraws them every trial, ``given`` uses the laws' own
        means.
    seed : int
    workers : int
        Threads used for trials.
    """

    class_laws: LawSource
    sample_sizes: tuple[int, ...]
    trials: int = 200
    estimators: tuple[str, ...] = ("scm", "linpool", "linpool_c")
    mean_mode: MeanMode = "fixed"
    seed: int = 0
    workers: int = 1
    name: str = "experiment"

    def __post_init__(self) -> None:
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.trials < 1:
            raise ConfigError(f"trials must be at least 1, got {self.trials}")
        if self.workers < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}")
        if self.mean_mode not in ("fixed", "resampled", "given"):
            raise ConfigError(f"unknown mean_mode {self.mean_mode!r}")
        unknown = [e for e in self.estimators if e not in _RUNNERS]
        if unknown:
            raise ConfigError(f"unknown estimator(s) {unknown}; available: {ESTIMATORS}")
        if not callable(self.class_laws):
            laws = tuple(self.class_laws)
            if len(laws) != len(self.sample_sizes):
                raise ConfigError(f"{len(laws)} class laws but {len(self.sample_sizes)} sample sizes")
            if len({law.p for law in laws}) != 1:
                raise ConfigError(f"class laws have different dimensions: {[law.p for law in laws]}")
            object.__setattr__(self, "class_laws", laws)

    @property
    def K(self) -> int:
        return len(self.sample_sizes)


@dataclass(frozen=True, eq=False)
class NmseTable:
    """Per-trial normalized squared errors and their summaries.

    ``errors[name]`` has shape ``(trials, K)``; rows of failed trials are NaN.
    """

    estimators: tuple[str, ...]
    K: int
    errors: dict[str, np.ndarray]
    failed: int = 0

    def _valid(self, name: str) -> np.ndarray:
        E = self.errors[name]
        return E[~np.any(np.isnan(E), axis=1)]

    def mean(self, name: str) -> np.ndarray:
        """Mean NMSE per class followed by the total."""
        E = self._valid(name)
        cols = np.column_stack([E, E.sum(axis=1)]) if E.size else np.full((0, self.K + 1), np.nan)
        m = len(cols)
        return np.array([math.fsum(cols[:, j]) / m if m else math.nan for j in range(self.K + 1)])

    def std(self, name: str) -> np.ndarray:
        E = self._valid(name)
        cols = np.column_stack([E, E.sum(axis=1)])
        m = len(cols)
        if m < 2:
            return np.full(self.K + 1, math.nan)
        mu = self.mean(name)
        return np.array([math.sqrt(math.fsum((cols[:, j] - mu[j]) ** 2) / (m - 1)) for j in range(self.K + 1)])

    def total(self, name: str) -> float:
        return float(self.mean(name)[-1])

    def to_csv(self, path: str | Path | io.TextIOBase | None = None) -> str:
        """Wide table: one mean row and one std row per estimator."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimator", "statistic", *[f"class_{k + 1}" for k in range(self.K)], "total"])
        for name in self.estimators:
            for stat, vals in (("mean", self.mean(name)), ("std", self.std(name))):
                w.writerow([name, stat, *[format(float(v), ".6g") for v in vals]])
        text = buf.getvalue()
        _emit(text, path)
        return text

    def to_long_csv(self, path: str | Path | io.TextIOBase | None = None) -> str:
        """Long format ``estimator,class,mean,std`` for plotting."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimator", "class", "mean", "std"])
        for name in self.estimators:
            mu, sd = self.mean(name), self.std(name)
            for k in range(self.K + 1):
                w.writerow([name, "total" if k == self.K else k + 1, format(float(mu[k]), ".6g"), format(float(sd[k]), ".6g")])
        text = buf.getvalue()
        _emit(text, path)
        return text


def _emit(text: str, path) -> None:
    if path is None:
        return
    if isinstance(path, (str, Path)):
        Path(path).write_text(text)
    else:
        path.write(text)


def _standard_mean(p: int, complex_: bool, rng: np.random.Generator) -> np.ndarray:
    mu = rng.standard_normal(p)
    if complex_:
        mu = (mu + 1j * rng.standard_normal(p)) / np.sqrt(2)
    return mu


def _trial(spec: ExperimentSpec, ss: np.random.SeedSequence, fixed_means) -> dict[str, np.ndarray] | None:
    rng = np.random.default_rng(ss)
    laws = list(spec.class_laws(rng) if callable(spec.class_laws) else spec.class_laws)
    if len(laws) != spec.K:
        raise ConfigError(f"law factory returned {len(laws)} laws for {spec.K} sample sizes")
    if spec.mean_mode == "fixed":
        laws = [law.with_mean(m) for law, m in zip(laws, fixed_means)]
    elif spec.mean_mode == "resampled":
        laws = [law.with_mean(_standard_mean(law.p, law.is_complex, rng)) for law in laws]
    classes = ClassCollection(tuple(sample(law, n, rng) for law, n in zip(laws, spec.sample_sizes)))
    out = {}
    for name in spec.estimators:
        ests = _RUNNERS[name](classes, laws)
        out[name] = np.array(
            [np.linalg.norm(E - law.cov_matrix) ** 2 / np.linalg.norm(law.cov_matrix) ** 2 for E, law in zip(ests, laws)]
        )
    return out


def run_nmse(spec: ExperimentSpec) -> NmseTable:
    """Normalized MSE ``||est - M_k||_F^2 / ||M_k||_F^2`` per class and estimator.

    A trial whose estimator raises a library error is logged and excluded
    from all summaries.
    """
    root = np.random.SeedSequence(spec.seed)
    mean_ss, *trial_ss = root.spawn(spec.trials + 1)
    fixed_means = None
    if spec.mean_mode == "fixed":
        shape_ss, draw_ss = mean_ss.spawn(2)
        laws0 = spec.class_laws(np.random.default_rng(shape_ss)) if callable(spec.class_laws) else spec.class_laws
        mrng = np.random.default_rng(draw_ss)
        fixed_means = [_standard_mean(law.p, law.is_complex, mrng) for law in laws0]

    def run(i: int):
        try:
            return _trial(spec, trial_ss[i], fixed_means)
        except LinpoolError as exc:
            log.warning("trial %d aborted: %s", i, exc)
            return None

    if spec.workers > 1:
        with ThreadPoolExecutor(spec.workers) as ex:
            results = list(ex.map(run, range(spec.trials)))
    else:
        results = [run(i) for i in range(spec.trials)]
    errors = {name: np.full((spec.trials, spec.K), np.nan) for name in spec.estimators}
    failed = 0
    for i, res in enumerate(results):
        if res is None:
            failed += 1
            continue
        for name in spec.estimators:
            errors[name][i] = res[name]
    return NmseTable(spec.estimators, spec.K, errors, failed)


# -- experiment builders ---------------------------------------------------

TABLE1_P = 100
TABLE1_NU = 8.0
TABLE1_RHOS = (0.3, 0.4, 0.5, 0.6)
TABLE1_SIZES = (20, 100, 20, 100)


def table1_laws(setup: str, p: int = TABLE1_P, nu: float = TABLE1_NU) -> list[EllipticalLaw]:
    """Four t-distributed classes with ``sigma_k^2 = k`` and ``rho = (0.3, 0.4, 0.5, 0.6)``.

    ``setup`` is ``ar1``, ``cs`` or ``mixed`` (AR(1) for classes 1-2, CS for 3-4).
    """
    kinds = {"ar1": ("ar1",) * 4, "cs": ("cs",) * 4, "mixed": ("ar1", "ar1", "cs", "cs")}
    if setup not in kinds:
        raise ConfigError(f"unknown setup {setup!r}; expected one of {tuple(kinds)}")
    laws = []
    for k, (kind, rho) in enumerate(zip(kinds[setup], TABLE1_RHOS)):
        model = getattr(CovarianceModel, kind)(p, rho, sigma2=float(k + 1))
        laws.append(EllipticalLaw("t", model, nu=nu))
    return laws


def table1_spec(
    setup: str = "ar1",
    trials: int = 200,
    seed: int = 0,
    estimators: Sequence[str] = ("scm", "bartz", "linpool", "linpool_c"),
    workers: int = 1,
) -> ExperimentSpec:
    return ExperimentSpec(
        table1_laws(setup), TABLE1_SIZES, trials, tuple(estimators), "fixed", seed, workers, f"table1_{setup}"
    )


def varying_k_laws(K: int, p: int = 100, nu: float = 8.0) -> Callable[[np.random.Generator], list[EllipticalLaw]]:
    """Class 1 is AR(1) with rho 0.5; classes 4, 8, 12, 16 are CS; the rest AR(1).

    Every class except the first redraws ``rho ~ U[0.1, 0.6]`` per trial.
    """
    if K < 1:
        raise ConfigError(f"K must be positive, got {K}")

    def factory(rng: np.random.Generator) -> list[EllipticalLaw]:
        laws = [EllipticalLaw("t", CovarianceModel.ar1(p, 0.5), nu=nu)]
        for k in range(2, K + 1):
            rho = float(rng.uniform(0.1, 0.6))
            model = CovarianceModel.cs(p, rho) if k % 4 == 0 else CovarianceModel.ar1(p, rho)
            laws.append(EllipticalLaw("t", model, nu=nu))
        return laws

    return factory


def varying_k_spec(K: int, trials: int = 200, seed: int = 0, n: int = 40, workers: int = 1) -> ExperimentSpec:
    return ExperimentSpec(varying_k_laws(K), (n,) * K, trials, ("linpool",), "resampled", seed, workers, f"varying_k_{K}")


def complex_ar1_laws(p: int = 100, nu: float = 8.0) -> list[EllipticalLaw]:
    """Complex t classes with AR(1) ``rho_k = r e^{2 pi i r}``, ``r = 0.3..0.6`` and ``sigma_k^2 = k``."""
    laws = []
    for k, r in enumerate(TABLE1_RHOS):
        rho = r * np.exp(2j * np.pi * r)
        laws.append(EllipticalLaw("complex_t", CovarianceModel.ar1(p, complex(rho), sigma2=float(k + 1)), nu=nu))
    return laws


def complex_ar1_spec(
    n: int,
    trials: int = 100,
    seed: int = 0,
    estimators: Sequence[str] = ("scm", "linpool", "linpool_c"),
    workers: int = 1,
) -> ExperimentSpec:
    return ExperimentSpec(complex_ar1_laws(), (n,) * 4, trials, tuple(estimators), "fixed", seed, workers, f"complex_ar1_n{n}")


# -- SSCM asymptotics ------------------------------------------------------


@dataclass(frozen=True)
class SscmAsymptotics:
    """Known-mean Gaussian SSCM diagnostics at one dimension.

    ``relative_bias`` estimates ``||E[L_hat] - L||_F / ||L||_F`` with the
    Monte Carlo noise floor removed; ``raw_relative_bias`` is the plain
    ``||avg(L_hat) - L||_F / ||L||_F``. ``scm_distance`` is the average of
    ``||L_hat - L_scm||_F^2 / ||L||_F^2``.
    """

    p: int
    n: int
    trials: int
    relative_bias: float
    bias_stderr: float
    raw_relative_bias: float
    scm_distance: float
    scm_distance_stderr: float


def _sscm_one_dim(
    M: np.ndarray, n: int, trials: int, rng: np.random.Generator, chunk: int
) -> SscmAsymptotics:
    # The SSCM is orthogonally equivariant, so work in the eigenbasis of M
    # where E[L_hat] is diagonal and draws are x = sqrt(mu) * g.
    mu = np.clip(np.linalg.eigvalsh(M), 0, None)
    p = mu.size
    eta = mu.mean()
    lam = mu / eta
    root = np.sqrt(mu)
    lam_norm2 = float(lam @ lam)
    diag_sum = np.zeros(p)
    diag_sq = []
    dist = []
    done = 0
    while done < trials:
        b = min(chunk, trials - done)
        X = rng.standard_normal((b, n, p)) * root
        nrm2 = np.einsum("bij,bij->bi", X, X)
        U = X / np.sqrt(nrm2)[..., None]
        d = (p / n) * np.einsum("bij,bij->bj", U, U)
        diag_sum += d.sum(axis=0)
        diag_sq.append(d)
        # ||A - B||^2 with A = (p/n) U'U and B = X'X / (n eta), via n x n Grams
        GU = U @ U.transpose(0, 2, 1)
        GX = X @ X.transpose(0, 2, 1)
        GUX = U @ X.transpose(0, 2, 1)
        a2 = (p / n) ** 2 * np.einsum("bij,bij->b", GU, GU)
        b2 = np.einsum("bij,bij->b", GX, GX) / (n * eta) ** 2
        ab = (p / n) / (n * eta) * np.einsum("bij,bij->b", GUX, GUX)
        dist.append((a2 + b2 - 2 * ab) / lam_norm2)
        done += b
    D = np.concatenate(diag_sq)
    dbar = diag_sum / trials
    raw2 = float(np.sum((dbar - lam) ** 2))
    # unbiased estimate of ||E d - lam||^2: subtract the variance of the mean
    noise2 = float(np.sum(np.var(D, axis=0, ddof=1))) / trials
    bias2 = raw2 - noise2
    # delta-method standard error of bias2
    per_trial = 2 * (D - dbar) @ (dbar - lam)
    se_bias2 = float(np.std(per_trial, ddof=1) / np.sqrt(trials)) if trials > 1 else math.nan
    rel = math.sqrt(max(bias2, 0.0) / lam_norm2)
    rel_se = se_bias2 / (2 * max(rel, 1e-300) * lam_norm2) if rel > 0 else math.nan
    dist = np.concatenate(dist)
    return SscmAsymptotics(
        p=p,
        n=n,
        trials=trials,
        relative_bias=rel,
        bias_stderr=rel_se,
        raw_relative_bias=math.sqrt(raw2 / lam_norm2),
        scm_distance=float(math.fsum(dist) / dist.size),
        scm_distance_stderr=float(np.std(dist, ddof=1) / np.sqrt(dist.size)) if dist.size > 1 else math.nan,
    )


def run_sscm_asymptotics(
    model: Callable[[int], CovarianceModel] | CovarianceModel,
    p_list: Sequence[int],
    trials: int = 2000,
    n: int = 100,
    seed: int = 0,
    chunk: int = 50,
) -> list[SscmAsymptotics]:
    """Bias of the known-mean SSCM shape and its distance to the scaled SCM.

    Parameters
    ----------
    model : callable or CovarianceModel
        ``model(p)`` returns the covariance at dimension ``p``; a fixed
        model is only valid for a single dimension.
    p_list : sequence of int
    trials : int
        Independent samples of size ``n`` per dimension.
    """
    if trials < 2:
        raise ConfigError(f"trials must be at least 2, got {trials}")
    factory = model if callable(model) else (lambda p: model)
    streams = np.random.SeedSequence(seed).spawn(len(p_list))
    out = []
    for p, ss in zip(p_list, streams):
        cov = factory(int(p))
        M = materialize(cov) if isinstance(cov, CovarianceModel) else np.asarray(cov)
        if M.shape[0] != p:
            raise ConfigError(f"model returned dimension {M.shape[0]} for p={p}")
        if np.iscomplexobj(M):
            raise ConfigError("SSCM asymptotics are implemented for real covariances")
        out.append(_sscm_one_dim(M, int(n), int(trials), np.random.default_rng(ss), chunk))
    return out


def sscm_bias_exact(M: np.ndarray) -> float:
    """Relative bias ``||E[L_hat] - L||_F / ||L||_F`` of the known-mean SSCM by quadrature.

    Uses ``E[mu_i g_i^2 / sum_j mu_j g_j^2] = int_0^inf mu_i / (1 + 2 mu_i t)
    prod_j (1 + 2 mu_j t)^{-1/2} dt`` for independent standard normal ``g``.
    """

    mu = np.clip(np.linalg.eigvalsh(np.asarray(M)), 0, None)
    p = mu.size
    lam = mu * p / mu.sum()

    def integrand(t: float, i: int) -> float:
        return lam[i] / (1 + 2 * lam[i] * t) * math.exp(-0.5 * float(np.sum(np.log1p(2 * lam * t))))

    e = np.array([quad(integrand, 0, np.inf, args=(i,), limit=200, epsabs=0, epsrel=1e-11)[0] for i in range(p)])
    return float(np.linalg.norm(p * e - lam) / np.linalg.norm(lam))
