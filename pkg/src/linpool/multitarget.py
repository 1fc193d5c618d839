"""Single-class shrinkage towards several targets.

:func:`multitarget_pool` turns each target matrix into a synthetic Gaussian
class and pools it with the observed SCM. :func:`bartz_estimate` is the
convex multi-target baseline with plug-in loss estimates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .dataset import ClassCollection, Dataset
from .errors import ConfigError, InsufficientDataError, ShapeError
from .estimators import pooling_statistics, sample_covariance
from .models import as_generator, psd_sqrt
from .pooling import CoefficientSet, PoolingConfig, combine, solve_constrained
from .qp import QpProblem, solve_small

TargetKind = Literal["constant_correlation", "single_factor", "identity", "explicit"]
TARGET_KINDS: tuple[str, ...] = ("constant_correlation", "single_factor", "identity", "explicit")


@dataclass(frozen=True, eq=False)
class TargetSpec:
    """A shrinkage target and the number of surrogate samples drawn from it.

    ``matrix`` is required for ``kind="explicit"`` and ignored otherwise.
    """

    kind: TargetKind
    matrix: np.ndarray | None = None
    samples: int = 1000

    def __post_init__(self) -> None:
        if self.kind not in TARGET_KINDS:
            raise ConfigError(f"unknown target kind {self.kind!r}; expected one of {TARGET_KINDS}")
        if self.kind == "explicit":
            if self.matrix is None:
                raise ConfigError("explicit target needs a matrix")
            M = np.asarray(self.matrix)
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise ShapeError(f"target matrix must be square, got shape {M.shape}")
        if int(self.samples) < 2:
            raise ConfigError(f"surrogate sample count must be at least 2, got {self.samples}")


def _real_scm(data: Dataset) -> np.ndarray:
    if data.n < 2:
        raise InsufficientDataError(f"target construction needs n >= 2, got n={data.n}")
    return sample_covariance(data)


def constant_correlation_target(data: Dataset) -> np.ndarray:
    """SCM variances with every correlation replaced by the average one."""
    S = _real_scm(data)
    s = np.real(np.diag(S))
    if data.p == 1:
        return S.copy()
    sd = np.sqrt(s)
    outer = np.outer(sd, sd)
    with np.errstate(divide="ignore", invalid="ignore"):
        R = np.where(outer > 0, S / outer, 0.0)
    off = ~np.eye(data.p, dtype=bool)
    rbar = np.mean(R[off])
    T = rbar * outer
    np.fill_diagonal(T, s)
    return T


def single_factor_target(data: Dataset) -> np.ndarray:
    """One-factor covariance with the equal-weighted average return as the factor.

    ``T = beta beta' var(m) + diag(residual variances)``, whose diagonal
    equals the sample variances.
    """
    S = _real_scm(data)
    X = data.X
    m = X.mean(axis=1)
    mc = m - m.mean()
    var_m = float(np.real(mc @ mc.conj())) / (data.n - 1)
    if var_m <= 0:
        return np.diag(np.real(np.diag(S)))
    Xc = X - X.mean(axis=0)
    beta = (Xc.T @ mc.conj()) / (data.n - 1) / var_m
    T = var_m * np.outer(beta, beta.conj())
    resid = np.real(np.diag(S)) - var_m * np.abs(beta) ** 2
    T[np.diag_indices_from(T)] += resid
    return (T + T.conj().T) / 2


def build_target(data: Dataset, spec: TargetSpec) -> np.ndarray:
    """Target matrix of ``spec`` estimated from ``data``."""
    if spec.kind == "constant_correlation":
        return constant_correlation_target(data)
    if spec.kind == "single_factor":
        return single_factor_target(data)
    if spec.kind == "identity":
        S = _real_scm(data)
        return float(np.real(np.trace(S))) / data.p * np.eye(data.p)
    T = np.asarray(spec.matrix)
    if T.shape != (data.p, data.p):
        raise ShapeError(f"explicit target is {T.shape}, data has p={data.p}")
    return T.copy()


def surrogate_sample(T: np.ndarray, size: int, rng: np.random.Generator) -> Dataset:
    """Zero-mean Gaussian draws with covariance ``T`` (rank deficiency allowed)."""
    p = T.shape[0]
    Z = rng.standard_normal((size, p))
    return Dataset(Z @ psd_sqrt(T).T)


@dataclass(frozen=True, eq=False)
class MultiTargetResult:
    estimate: np.ndarray
    coefficients: CoefficientSet
    targets: list[np.ndarray]

    @property
    def weights(self) -> np.ndarray:
        """Weights of ``(S, S_T1, ..., S_TM, I)`` for the observed class."""
        return self.coefficients.column(0)


def multitarget_pool(
    data: Dataset,
    targets: Sequence[TargetSpec],
    config: PoolingConfig | None = None,
    rng: np.random.Generator | np.random.SeedSequence | int | None = None,
    target_data: Dataset | None = None,
) -> MultiTargetResult:
    """Shrink the SCM of ``data`` towards the given targets.

    Each target ``T_m`` is built from ``target_data`` (default: ``data``),
    ``samples`` zero-mean Gaussian surrogates with covariance ``T_m`` are
    drawn, and the observed sample is pooled with the surrogate classes and
    the identity. Only the observed class's estimate is returned.

    Parameters
    ----------
    rng : Generator, SeedSequence or int, optional
        Source for the surrogates; each target gets its own spawned stream.
    """
    config = config or PoolingConfig("nonneg_identity")
    if not config.uses_identity:
        raise ConfigError(f"multi-target pooling needs an identity variant, got {config.variant!r}")
    if data.n < 2:
        raise InsufficientDataError(f"multi-target pooling needs n >= 2, got n={data.n}")
    src = target_data if target_data is not None else data
    if src.p != data.p:
        raise ShapeError(f"target data has p={src.p}, data has p={data.p}")
    mats = [build_target(src, spec) for spec in targets]
    streams = as_generator(rng).spawn(len(mats)) if mats else []
    surrogates = [surrogate_sample(T, spec.samples, g) for T, spec, g in zip(mats, targets, streams)]
    classes = ClassCollection((data, *surrogates))
    stats = pooling_statistics(classes)
    coefs = solve_constrained(stats, config)
    scms = [sample_covariance(d) for d in classes]
    first = CoefficientSet(coefs.weights[:, :1], coefs.used_qp_fallback[:1], True, coefs.damped)
    return MultiTargetResult(combine(scms, first)[0], first, mats)


@dataclass(frozen=True, eq=False)
class BartzResult:
    estimate: np.ndarray
    weights: np.ndarray
    """Target weights ``a_1..a_M``; the SCM weight is ``1 - sum(weights)``."""

    @property
    def scm_weight(self) -> float:
        return float(1.0 - self.weights.sum())


def bartz_estimate(data: Dataset, targets: Sequence[np.ndarray]) -> BartzResult:
    """Convex combination ``(1 - sum a) S + sum a_m T_m`` with plug-in loss.

    The data are centered on the sample mean and ``S`` uses divisor ``n``.
    Weights minimize ``a'Qa - 2 b a'1`` over ``a >= 0, sum(a) <= 1`` with
    ``Q_ij = tr((T_i - S)(T_j - S))`` and ``b`` the estimated variance of
    ``S``.
    """
    n, p = data.n, data.p
    if n < 2:
        raise InsufficientDataError(f"BARTZ needs n >= 2, got n={n}")
    Xc = data.X - data.X.mean(axis=0)
    S = (Xc.T @ Xc.conj()) / n
    S = (S + S.conj().T) / 2
    M = len(targets)
    if M == 0:
        return BartzResult(S, np.zeros(0))
    diffs = []
    for T in targets:
        T = np.asarray(T)
        if T.shape != (p, p):
            raise ShapeError(f"target has shape {T.shape}, data has p={p}")
        diffs.append(T - S)
    Q = np.empty((M, M))
    for i in range(M):
        for j in range(i, M):
            Q[i, j] = Q[j, i] = np.real(np.vdot(diffs[j], diffs[i]))
    # sum_s ||x_s x_s^H - S||^2 = sum_s ||x_s||^4 - n ||S||^2
    norms4 = np.sum(np.sum(np.abs(Xc) ** 2, axis=1) ** 2)
    b = (norms4 - n * np.real(np.vdot(S, S))) / (n * (n - 1))
    scale = max(np.trace(Q) / M, abs(b), 1e-300)
    Qr = Q + 1e-10 * scale * np.eye(M)
    res = solve_small(QpProblem(Qr / scale, np.full(M, b) / scale, sum_le=1.0))
    a = np.clip(res.x, 0.0, None)
    est = (1.0 - a.sum()) * S
    for w, T in zip(a, targets):
        est = est + w * np.asarray(T)
    return BartzResult((est + est.conj().T) / 2, a)
