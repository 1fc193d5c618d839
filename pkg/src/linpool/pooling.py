"""MSE-optimal linear pooling of class sample covariance matrices.

For class ``k`` the pooled estimate is ``sum_j a_jk S_j (+ a_Ik I)``. The
coefficients minimize the scaled MSE ``a'(D + C)a - 2 c_k'a + c_kk`` (or its
identity-augmented form) under one of four constraint regimes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .dataset import ClassCollection, Dataset
from .errors import ConditioningError, ConfigError, ShapeError
from .estimators import PoolingStatistics, pooling_statistics, sample_covariance
from .qp import COND_LIMIT, QpProblem, solve_small

log = logging.getLogger(__name__)

Variant = Literal["unconstrained", "nonneg", "nonneg_identity", "convex"]
VARIANTS: tuple[str, ...] = ("unconstrained", "nonneg", "nonneg_identity", "convex")
FEASIBILITY_TOL = 1e-12


@dataclass(frozen=True)
class PoolingConfig:
    """Constraint regime for the pooling coefficients.

    Parameters
    ----------
    variant : {"unconstrained", "nonneg", "nonneg_identity", "convex"}
        ``nonneg`` constrains ``a >= 0`` on the SCMs only; ``nonneg_identity``
        adds the identity target with ``a_I >= aLB``; ``convex`` additionally
        requires all K + 1 weights to sum to one.
    identity_lower_bound : float or sequence of float
        ``aLB``, scalar or one value per class. Must be positive.
    identity_lb_scale : float, optional
        If given, overrides ``identity_lower_bound`` with
        ``aLB_k = identity_lb_scale * eta_k``.
    identity : bool
        Whether the ``unconstrained`` variant includes the identity target.
    """

    variant: Variant = "nonneg_identity"
    identity_lower_bound: float | tuple[float, ...] = 1e-8
    identity_lb_scale: float | None = None
    identity: bool = False

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown pooling variant {self.variant!r}; expected one of {VARIANTS}")
        lb = np.atleast_1d(np.asarray(self.identity_lower_bound, dtype=float))
        if self.uses_identity and not np.all(lb > 0):
            raise ConfigError("identity_lower_bound must be positive when the identity target is used")
        if not isinstance(self.identity_lower_bound, float):
            object.__setattr__(self, "identity_lower_bound", tuple(float(v) for v in lb) if lb.size > 1 else float(lb[0]))
        if self.identity_lb_scale is not None and not 0 < self.identity_lb_scale <= 1:
            raise ConfigError(f"identity_lb_scale must lie in (0, 1], got {self.identity_lb_scale}")

    @property
    def uses_identity(self) -> bool:
        return self.variant in ("nonneg_identity", "convex") or (self.variant == "unconstrained" and self.identity)

    def lower_bounds(self, stats: PoolingStatistics) -> np.ndarray:
        """Per-class identity lower bounds ``aLB_k``."""
        if self.identity_lb_scale is not None:
            return self.identity_lb_scale * stats.f
        lb = np.atleast_1d(np.asarray(self.identity_lower_bound, dtype=float))
        if lb.size not in (1, stats.K):
            raise ConfigError(f"identity_lower_bound has {lb.size} entries for {stats.K} classes")
        return np.broadcast_to(lb, (stats.K,)).copy()


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Solved weights, one column per target class.

    ``weights`` has shape ``(K, K)`` or ``(K + 1, K)`` with the identity
    weight in the last row. ``used_qp_fallback[k]`` records whether the
    closed-form solution for class ``k`` was infeasible and the QP was solved.
    """

    weights: np.ndarray
    used_qp_fallback: np.ndarray
    with_identity: bool
    damped: bool = False

    @property
    def K(self) -> int:
        return self.weights.shape[1]

    def column(self, k: int) -> np.ndarray:
        return self.weights[:, k]

    @property
    def identity_weights(self) -> np.ndarray | None:
        return self.weights[-1] if self.with_identity else None


def _solve_dense(B: np.ndarray, R: np.ndarray) -> tuple[np.ndarray, bool]:
    """``B^{-1} R`` with a Tikhonov retry for near-singular ``B``."""
    w = np.linalg.eigvalsh(B)
    if w[0] > 0 and w[-1] / w[0] <= COND_LIMIT:
        return np.linalg.solve(B, R), False
    d = B.shape[0]
    Bd = B + 1e-12 * np.trace(B) / d * np.eye(d)
    wd = np.linalg.eigvalsh(Bd)
    if not wd[0] > 0 or wd[-1] / wd[0] > 1e15:
        raise ConditioningError(f"pooling system is singular (eigenvalues in [{w[0]:.3g}, {w[-1]:.3g}])")
    log.warning("pooling system ill-conditioned (cond=%.3g); using damped copy", w[-1] / max(w[0], 1e-300))
    return np.linalg.solve(Bd, R), True


def solve_unconstrained(stats: PoolingStatistics, with_identity: bool = False) -> CoefficientSet:
    """Closed-form minimizer ``(D + C)^{-1} C`` (or its identity-augmented form)."""
    B, R = stats.system(with_identity)
    A, damped = _solve_dense(B, R)
    return CoefficientSet(A, np.zeros(stats.K, dtype=bool), with_identity, damped)


def _equality_closed_form(B: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Minimizer of ``1/2 a'Ba - r'a`` subject to ``sum(a) = 1``."""
    d = r.size
    K = np.zeros((d + 1, d + 1))
    K[:d, :d] = B
    K[:d, d] = K[d, :d] = 1.0
    return np.linalg.solve(K, np.append(r, 1.0))[:d]


def solve_constrained(stats: PoolingStatistics, config: PoolingConfig) -> CoefficientSet:
    """Per-class coefficients under ``config``.

    Each class first takes the closed-form solution of its equality-only
    problem; only if that violates a bound by more than ``1e-12`` is the full
    QP solved.
    """
    if config.variant == "unconstrained":
        return solve_unconstrained(stats, config.identity)
    with_identity = config.uses_identity
    B, R = stats.system(with_identity)
    K, d = stats.K, B.shape[0]
    lb_id = config.lower_bounds(stats) if with_identity else None
    convex = config.variant == "convex"
    if convex:
        A0 = np.column_stack([_equality_closed_form(B, R[:, k]) for k in range(K)])
        damped = False
    else:
        A0, damped = _solve_dense(B, R)
    A = A0.copy()
    fallback = np.zeros(K, dtype=bool)
    for k in range(K):
        lower = np.zeros(d)
        if with_identity:
            lower[-1] = lb_id[k]
        if np.all(A0[:, k] >= lower - FEASIBILITY_TOL):
            continue
        fallback[k] = True
        res = solve_small(QpProblem(B, R[:, k], lower=lower, sum_eq=1.0 if convex else None))
        damped = damped or res.damped
        A[:, k] = res.x
    return CoefficientSet(A, fallback, with_identity, damped)


def mse_objective(a: np.ndarray, stats: PoolingStatistics, k: int) -> float:
    """Scaled MSE ``p (a'(D + C)a - 2 c_k'a + c_kk)`` of the weights ``a`` for class ``k``.

    A weight vector of length ``K + 1`` is interpreted as including the
    identity weight.
    """
    a = np.asarray(a, dtype=float)
    B, R = stats.system(with_identity=a.size == stats.K + 1)
    return float(stats.p * (a @ B @ a - 2 * R[:, k] @ a + stats.C[k, k]))


def combine(scms: Sequence[np.ndarray], coefficients: CoefficientSet) -> list[np.ndarray]:
    """Pooled estimates ``sum_j a_jk S_j (+ a_Ik I)`` for every class."""
    S = np.stack([np.asarray(s) for s in scms])
    K, p = S.shape[0], S.shape[1]
    W = coefficients.weights
    out = []
    for k in range(coefficients.K):
        est = np.tensordot(W[:K, k], S, axes=1)
        if coefficients.with_identity:
            est = est + W[K, k] * np.eye(p)
        out.append((est + est.conj().T) / 2)
    return out


@dataclass(frozen=True, eq=False)
class PoolingResult:
    estimates: list[np.ndarray]
    coefficients: CoefficientSet
    stats: PoolingStatistics
    scms: list[np.ndarray]


def pool(
    classes: ClassCollection | Sequence[Dataset],
    config: PoolingConfig | None = None,
    stats: PoolingStatistics | None = None,
    approximate: bool = False,
) -> PoolingResult:
    """Pool the class SCMs.

    Parameters
    ----------
    classes : ClassCollection or sequence of Dataset
        The K class samples.
    config : PoolingConfig, optional
        Defaults to nonnegative weights with identity, ``aLB = 1e-8``.
    stats : PoolingStatistics, optional
        Injected statistics (e.g. population values). Estimated from
        ``classes`` when omitted.
    approximate : bool
        Use the approximate finite-sample sphericity correction.

    Returns
    -------
    PoolingResult
        Estimates, coefficients, the statistics used and the class SCMs.
    """
    classes = ClassCollection.of(classes)
    config = config or PoolingConfig()
    if stats is None:
        stats = pooling_statistics(classes, approximate)
    elif stats.K != classes.K or stats.p != classes.p:
        raise ShapeError(f"statistics are for K={stats.K}, p={stats.p}; data has K={classes.K}, p={classes.p}")
    scms = [sample_covariance(d) for d in classes]
    coefs = solve_constrained(stats, config)
    return PoolingResult(combine(scms, coefs), coefs, stats, scms)
