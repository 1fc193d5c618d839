"""Per-class statistics feeding the pooling coefficients.

The scale comes from the SCM, the elliptical kurtosis from averaged marginal
kurtoses, and the sphericity and cross inner products from spatial sign
covariance matrices (SSCMs) centered on the spatial median.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .dataset import ClassCollection, Dataset
from .errors import InsufficientDataError, NumericalError, ShapeError

log = logging.getLogger(__name__)

Field = Literal["real", "complex"]

__all__ = [
    "ClassCollection",
    "ClassStatistics",
    "Dataset",
    "PoolingStatistics",
    "class_statistics",
    "delta_estimate",
    "kurtosis_estimate",
    "kurtosis_lower_bound",
    "pooling_statistics",
    "sample_covariance",
    "scale_estimate",
    "spatial_median",
    "sphericity_estimate",
    "sscm_shape",
    "zou_correction",
]


def _hermitian(A: np.ndarray) -> np.ndarray:
    return (A + A.conj().T) / 2


def sample_covariance(data: Dataset) -> np.ndarray:
    """Unbiased sample covariance matrix.

    Centers on the sample mean with divisor ``n - 1``, or on the known mean
    with divisor ``n`` when the dataset carries one.
    """
    X = data.X
    if data.known_mean is not None:
        Xc = X - data.known_mean
        denom = data.n
    else:
        if data.n < 2:
            raise InsufficientDataError(f"SCM needs n >= 2 without a known mean, got n={data.n}")
        Xc = X - X.mean(axis=0)
        denom = data.n - 1
    return _hermitian(Xc.T @ Xc.conj()) / denom


def spatial_median(
    data: Dataset | np.ndarray,
    tol: float = 1e-9,
    max_iter: int = 500,
) -> np.ndarray:
    """Minimizer of ``sum_i ||x_i - m||`` by Weiszfeld iteration.

    Iterates that hit a data point are moved off it with the Vardi-Zhang
    modification, which also certifies optimality at a data point. Iteration
    stops once the (sub)gradient norm per observation drops below ``tol``, the
    step stalls at rounding level, or ``max_iter`` is reached.

    Complex data is treated as points in the real space of twice the
    dimension; the weights are real so the update is unchanged.
    """
    X = data.X if isinstance(data, Dataset) else np.asarray(data)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n == 1:
        return X[0].copy()
    if np.iscomplexobj(X):
        m = X.mean(axis=0)
    else:
        m = np.median(X, axis=0)
    scale = float(np.max(np.linalg.norm(X - X.mean(axis=0), axis=1)))
    if scale == 0.0:
        return X[0].copy()
    coincide_tol = 1e-12 * scale

    for it in range(max_iter):
        diff = X - m
        dist = np.linalg.norm(diff, axis=1)
        at = dist <= coincide_tol
        w = 1.0 / dist[~at]
        R = (w[:, None] * diff[~at]).sum(axis=0)
        multiplicity = int(at.sum())
        grad = max(np.linalg.norm(R) - multiplicity, 0.0)
        if grad <= tol * n:
            break
        T = (w[:, None] * X[~at]).sum(axis=0) / w.sum()
        if multiplicity:
            gamma = min(1.0, multiplicity / np.linalg.norm(R))
            m_new = (1 - gamma) * T + gamma * m
        else:
            m_new = T
        step = np.linalg.norm(m_new - m)
        m = m_new
        if step <= 1e-15 * scale:
            break
    else:
        log.debug("spatial median reached max_iter=%d (gradient %.3g)", max_iter, grad / n)
    return m


def _centered_signs(data: Dataset, center: np.ndarray | None = None):
    """Unit-normalized centered observations, dropping any at the center."""
    if center is None:
        center = data.known_mean if data.known_mean is not None else spatial_median(data)
    D = data.X - center
    dist = np.linalg.norm(D, axis=1)
    scale = dist.max()
    keep = dist > 1e-13 * scale if scale > 0 else np.zeros(data.n, dtype=bool)
    dropped = data.n - int(keep.sum())
    if dropped:
        log.info("SSCM: dropped %d observation(s) coinciding with the center", dropped)
    if not keep.any():
        raise InsufficientDataError("all observations coincide with the center")
    return D[keep] / dist[keep, None], dist[keep], center


def sscm_shape(data: Dataset, center: np.ndarray | None = None) -> np.ndarray:
    """Shape estimate ``p * SSCM``, trace exactly ``p``.

    Centers on ``center`` if given, else the known mean, else the spatial
    median. Observations that coincide with the center are skipped.
    """
    U, _, _ = _centered_signs(data, center)
    n, p = U.shape
    return _hermitian(U.T @ U.conj()) * (p / n)


def scale_estimate(scm: np.ndarray) -> float:
    """Mean eigenvalue ``tr(S) / p``."""
    return float(np.real(np.trace(scm))) / scm.shape[0]


def kurtosis_lower_bound(p: int, field: Field = "real") -> float:
    return -2.0 / (p + 2) if field == "real" else -1.0 / (p + 1)


def kurtosis_estimate(data: Dataset) -> float:
    """Elliptical kurtosis from the averaged marginal sample kurtoses.

    Real data uses the bias-corrected form ``N/3 ((n+1) g2 + 6)`` with
    ``N = (n-1)/((n-2)(n-3))``; complex data uses the plain average of
    ``E|x|^4 / (E|x|^2)^2`` halved, minus one. Values below the theoretical
    lower bound are replaced by 0.99 times that bound.
    """
    n, p = data.n, data.p
    complex_ = data.is_complex
    if not complex_ and n < 4:
        raise InsufficientDataError(f"real kurtosis estimate needs n >= 4, got n={n}")
    if complex_ and n < 2:
        raise InsufficientDataError(f"complex kurtosis estimate needs n >= 2, got n={n}")
    Xc = data.X - data.X.mean(axis=0)
    a2 = np.abs(Xc) ** 2
    m2 = a2.mean(axis=0)
    m4 = (a2**2).mean(axis=0)
    ok = m2 > 0
    if not ok.any():
        raise InsufficientDataError("every variable has zero sample variance")
    ratio = np.mean(m4[ok] / m2[ok] ** 2)
    if complex_:
        kappa = ratio / 2 - 1
        lb = kurtosis_lower_bound(p, "complex")
    else:
        g2 = ratio - 3
        N = (n - 1) / ((n - 2) * (n - 3))
        kappa = N / 3 * ((n + 1) * g2 + 6)
        lb = kurtosis_lower_bound(p, "real")
    if kappa < lb:
        kappa = 0.99 * lb
    return float(kappa)


def _q_ratios(dist: np.ndarray) -> tuple[float, float, float]:
    q1 = np.mean(1 / dist)
    q2 = np.mean(1 / dist**2)
    q3 = np.mean(1 / dist**3)
    return q2 / q1**2, q2 * q3 / q1**5, q3 / q1**3


def _zou_d(dist: np.ndarray) -> float:
    n = dist.size
    t, t23, t3 = _q_ratios(dist)
    return float((2 - 2 * t + t**2) / n**2 + (8 * t - 6 * t**2 + 2 * t23 - 2 * t3) / n**3)


def zou_correction(data: Dataset, approximate: bool = False, center: np.ndarray | None = None) -> float:
    """Finite-sample correction for centering the SSCM on the spatial median.

    ``approximate=True`` returns ``n^-2 + 2 n^-3``.
    """
    if approximate:
        n = data.n
        return 1.0 / n**2 + 2.0 / n**3
    if center is None:
        center = spatial_median(data)
    _, dist, _ = _centered_signs(data, center)
    return _zou_d(dist)


def _gamma_from_shape(shape: np.ndarray, n: int) -> float:
    p = shape.shape[0]
    tr2 = float(np.real(np.vdot(shape, shape)))
    return n / (n - 1) * (tr2 / p - p / n)


def _sphericity(U: np.ndarray, dist: np.ndarray, mean_known: bool, approximate: bool):
    n, p = U.shape
    if n < 2:
        raise InsufficientDataError(f"sphericity estimate needs n >= 2, got n={n}")
    shape = _hermitian(U.T @ U.conj()) * (p / n)
    gamma = _gamma_from_shape(shape, n)
    gamma_star = gamma
    if not mean_known:
        d = 1.0 / n**2 + 2.0 / n**3 if approximate else _zou_d(dist)
        gamma_star = gamma - p * d
    return shape, gamma, float(np.clip(gamma_star, 1.0, p))


def sphericity_estimate(data: Dataset, approximate: bool = False) -> tuple[float, float]:
    """Sphericity from the SSCM: ``(gamma_hat, gamma_star)``.

    ``gamma_hat`` is the uncorrected estimate. ``gamma_star`` subtracts
    ``p * d`` (see :func:`zou_correction`) when the mean had to be estimated,
    and is clipped to the admissible range ``[1, p]``.
    """
    U, dist, _ = _centered_signs(data)
    _, gamma, gamma_star = _sphericity(U, dist, data.known_mean is not None, approximate)
    return gamma, gamma_star


def delta_estimate(
    eta: float,
    kappa: float,
    gamma: float,
    n: int,
    p: int,
    field: Field = "real",
    mean_known: bool = False,
) -> float:
    """Scaled MSE ``E||S - M||_F^2 / p`` of the SCM under ellipticity.

    With ``mean_known`` the SCM divides by ``n`` instead of ``n - 1`` and the
    leading ``1/(n-1)`` becomes ``1/n``.
    """
    if n < 2:
        raise InsufficientDataError(f"scaled MSE needs n >= 2, got n={n}")
    base = (1.0 / n if mean_known else 1.0 / (n - 1)) + kappa / n
    if field == "real":
        delta = eta**2 * (base * (p + gamma) + kappa * gamma / n)
    elif field == "complex":
        delta = eta**2 * (base * p + kappa * gamma / n)
    else:
        raise ValueError(f"field must be 'real' or 'complex', got {field!r}")
    if not delta > 0:
        raise NumericalError(
            f"scaled MSE estimate is not positive (delta={delta:.6g}; eta={eta:.6g}, "
            f"kappa={kappa:.6g}, gamma={gamma:.6g}, n={n}, p={p})"
        )
    return float(delta)


@dataclass(frozen=True, eq=False)
class ClassStatistics:
    """Everything estimated from one class."""

    scm: np.ndarray
    shape: np.ndarray
    eta: float
    kappa: float
    gamma: float
    gamma_star: float
    delta: float
    center: np.ndarray
    n: int
    field: Field

    @property
    def p(self) -> int:
        return self.scm.shape[0]


def class_statistics(data: Dataset, approximate: bool = False) -> ClassStatistics:
    """Estimate scale, kurtosis, sphericity and scaled MSE for one class."""
    p = data.p
    field: Field = "complex" if data.is_complex else "real"
    scm = sample_covariance(data)
    eta = scale_estimate(scm)
    kappa = kurtosis_estimate(data)
    U, dist, center = _centered_signs(data)
    shape, gamma, gamma_star = _sphericity(U, dist, data.known_mean is not None, approximate)
    delta = delta_estimate(eta, kappa, gamma_star, data.n, p, field, data.known_mean is not None)
    return ClassStatistics(scm, shape, eta, kappa, gamma, gamma_star, delta, center, data.n, field)


@dataclass(frozen=True, eq=False)
class PoolingStatistics:
    """Inputs of the coefficient problem: ``C``, ``D = diag(delta)`` and scales ``f``.

    ``classes`` holds the per-class estimates when the object was built from
    data; it is ``None`` for statistics injected directly (e.g. population
    values from :meth:`from_population`).
    """

    C: np.ndarray
    D: np.ndarray
    f: np.ndarray
    n: np.ndarray
    p: int
    classes: tuple[ClassStatistics, ...] | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        C = np.asarray(self.C, dtype=float)
        D = np.asarray(self.D, dtype=float).ravel()
        f = np.asarray(self.f, dtype=float).ravel()
        K = D.size
        if C.shape != (K, K) or f.size != K:
            raise ShapeError(f"inconsistent sizes: C {C.shape}, D {D.shape}, f {f.shape}")
        if not np.allclose(C, C.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(C).max())):
            raise ShapeError("C must be symmetric")
        if not np.all(D > 0):
            raise NumericalError(f"D must be strictly positive, got {D}")
        object.__setattr__(self, "C", (C + C.T) / 2)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "n", np.broadcast_to(np.asarray(self.n), (K,)).copy())

    @property
    def K(self) -> int:
        return self.D.size

    def system(self, with_identity: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Quadratic term and right-hand sides of the per-class problems.

        Returns ``(B, R)`` such that the class-``k`` objective is
        ``a' B a - 2 R[:, k]' a + c_kk``. Without identity this is
        ``(D + C, C)``; with identity it is the augmented system with the
        scales in the last row and column and a unit corner.
        """
        B = np.diag(self.D) + self.C
        if not with_identity:
            return B, self.C.copy()
        K = self.K
        Bt = np.empty((K + 1, K + 1))
        Bt[:K, :K] = B
        Bt[:K, K] = Bt[K, :K] = self.f
        Bt[K, K] = 1.0
        R = np.vstack([self.C, self.f[None, :]])
        return Bt, R

    def permuted(self, order: Sequence[int]) -> "PoolingStatistics":
        idx = np.asarray(order)
        classes = None if self.classes is None else tuple(self.classes[i] for i in idx)
        return PoolingStatistics(self.C[np.ix_(idx, idx)], self.D[idx], self.f[idx], self.n[idx], self.p, classes)

    @classmethod
    def from_population(
        cls,
        covariances: Sequence[np.ndarray],
        sizes: Sequence[int],
        kappas: Sequence[float] | float = 0.0,
        field: Field = "real",
        mean_known: bool = False,
    ) -> "PoolingStatistics":
        """Oracle statistics computed from the true covariance matrices."""
        Ms = [np.asarray(M) for M in covariances]
        K, p = len(Ms), Ms[0].shape[0]
        kappas = np.broadcast_to(np.asarray(kappas, dtype=float), (K,))
        C = np.empty((K, K))
        for i in range(K):
            for j in range(i, K):
                C[i, j] = C[j, i] = np.real(np.vdot(Ms[j], Ms[i])) / p
        f = np.array([np.real(np.trace(M)) / p for M in Ms])
        gammas = np.diag(C) / f**2
        D = np.array(
            [delta_estimate(f[k], kappas[k], gammas[k], int(sizes[k]), p, field, mean_known) for k in range(K)]
        )
        return cls(C, D, f, np.asarray(sizes), p)


def pooling_statistics(
    classes: ClassCollection | Sequence[Dataset], approximate: bool = False
) -> PoolingStatistics:
    """Estimate ``C``, ``D`` and ``f`` from K class samples.

    Diagonal entries of ``C`` are ``gamma_star * eta^2``; off-diagonal entries
    are ``tr((eta_i L_i)(eta_j L_j)) / p`` from the uncorrected SSCM shapes,
    damped towards ``eta_i eta_j`` in the rare case that the combination
    would make the identity-augmented system indefinite.
    """
    classes = ClassCollection.of(classes)
    stats = tuple(class_statistics(d, approximate) for d in classes)
    K, p = len(stats), classes.p
    C = np.empty((K, K))
    for i in range(K):
        si = stats[i]
        C[i, i] = si.gamma_star * si.eta**2
        for j in range(i + 1, K):
            sj = stats[j]
            C[i, j] = C[j, i] = si.eta * sj.eta * np.real(np.vdot(sj.shape, si.shape)) / p
    D = np.array([s.delta for s in stats])
    f = np.array([s.eta for s in stats])
    return PoolingStatistics(_damp_cross_terms(C, D, f), D, f, classes.sizes, p, stats)


def _damp_cross_terms(C: np.ndarray, D: np.ndarray, f: np.ndarray, margin: float = 1e-3) -> np.ndarray:
    """Shrink the centered cross terms until ``D + C - f f'`` is positive definite.

    With population values ``C - f f'`` is the Gram matrix of ``M_k - eta_k I``
    and the identity-augmented system is positive definite. The plug-in
    estimates mix bias-corrected sphericities on the diagonal with raw SSCM
    inner products off it and can break this at small ``n``. The diagonal is
    kept and the off-diagonal ``c_ij - eta_i eta_j`` are scaled by the largest
    ``t`` in ``[0, 1]`` for which the Jacobi-scaled Schur complement has
    smallest eigenvalue at least ``margin``.
    """
    G = C - np.outer(f, f)
    A = D + np.diag(G)
    E = G - np.diag(np.diag(G))
    if not np.any(E):
        return C
    s = 1.0 / np.sqrt(A)
    lam = np.linalg.eigvalsh(E * np.outer(s, s))[0]
    if 1.0 + lam >= margin:
        return C
    t = (1.0 - margin) / -lam
    log.warning("estimated cross-class terms make the pooling system indefinite; scaled them by %.3g", t)
    return np.outer(f, f) + np.diag(np.diag(G)) + t * E
