"""Parametric covariance families and elliptical sample generation.

Samples are drawn through the stochastic representation
``x = mu + r * M^(1/2) u`` with ``u`` uniform on the (real or complex) unit
sphere and a modular variate ``r`` normalized so that ``E[r^2] = p``; the
covariance of every law below is therefore exactly the model matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Literal

import numpy as np

from .dataset import Dataset
from .errors import InvalidModelError, UnsupportedClosedFormError

ModelKind = Literal["ar1", "cs", "banded1", "spiked", "explicit"]
Family = Literal["gaussian", "t", "complex_gaussian", "complex_t"]

_KINDS = ("ar1", "cs", "banded1", "spiked", "explicit")
_FAMILIES = ("gaussian", "t", "complex_gaussian", "complex_t")


def as_generator(rng: np.random.Generator | np.random.SeedSequence | int | None) -> np.random.Generator:
    """Coerce a seed, seed sequence or generator into a ``Generator``."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def banded1_rho_limit(p: int) -> float:
    """Largest admissible ``|rho|`` for a 1-banded Toeplitz matrix of size p."""
    if p == 1:
        return np.inf
    return 1.0 / (2.0 * np.cos(np.pi / (p + 1)))


@dataclass(frozen=True, eq=False)
class CovarianceModel:
    """A covariance matrix family evaluated at dimension ``p``.

    Use the named constructors (:meth:`ar1`, :meth:`cs`, :meth:`banded1`,
    :meth:`spiked`, :meth:`explicit`) rather than the raw initializer.
    """

    kind: ModelKind
    p: int
    sigma2: float = 1.0
    rho: complex | float = 0.0
    low_rank: np.ndarray | None = None
    alpha: float = 0.0
    matrix: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise InvalidModelError(f"unknown covariance model kind {self.kind!r}")
        if int(self.p) != self.p or self.p < 1:
            raise InvalidModelError(f"dimension must be a positive integer, got {self.p!r}")
        object.__setattr__(self, "p", int(self.p))
        if self.kind in ("ar1", "cs", "banded1"):
            if not self.sigma2 > 0:
                raise InvalidModelError(f"sigma2 must be positive, got {self.sigma2}")
            self._check_rho()
        elif self.kind == "spiked":
            self._check_spiked()
        else:
            self._check_explicit()

    def _check_rho(self) -> None:
        rho, p = self.rho, self.p
        if self.kind == "ar1":
            if not abs(rho) < 1:
                raise InvalidModelError(f"AR(1) requires |rho| < 1, got {rho}")
            return
        if np.iscomplexobj(rho) and np.imag(rho) != 0:
            raise InvalidModelError(f"{self.kind} requires a real correlation, got {rho}")
        rho = float(np.real(rho))
        object.__setattr__(self, "rho", rho)
        if self.kind == "cs":
            lower = -1.0 / (p - 1) if p > 1 else -np.inf
            if not lower < rho < 1:
                raise InvalidModelError(f"CS requires rho in ({lower:.6g}, 1) at p={p}, got {rho}")
        elif not abs(rho) < banded1_rho_limit(p):
            raise InvalidModelError(
                f"1-banded Toeplitz requires |rho| < {banded1_rho_limit(p):.6g} at p={p}, got {rho}"
            )

    def _check_spiked(self) -> None:
        if self.low_rank is None:
            raise InvalidModelError("spiked model needs a low-rank part")
        Mr = np.asarray(self.low_rank)
        if Mr.shape != (self.p, self.p):
            raise InvalidModelError(f"low-rank part has shape {Mr.shape}, expected ({self.p}, {self.p})")
        if not np.allclose(Mr, Mr.conj().T, atol=1e-12 * max(1.0, np.abs(Mr).max())):
            raise InvalidModelError("low-rank part must be symmetric/Hermitian")
        if np.linalg.eigvalsh(Mr).min() < -1e-10 * max(1.0, np.abs(Mr).max()):
            raise InvalidModelError("low-rank part must be positive semidefinite")
        if not self.alpha > 0:
            raise InvalidModelError(f"spiked model needs alpha > 0, got {self.alpha}")

    def _check_explicit(self) -> None:
        if self.matrix is None:
            raise InvalidModelError("explicit model needs a matrix")
        M = np.asarray(self.matrix)
        if M.shape != (self.p, self.p):
            raise InvalidModelError(f"matrix has shape {M.shape}, expected ({self.p}, {self.p})")
        if not np.all(np.isfinite(M)):
            raise InvalidModelError("matrix has non-finite entries")
        if not np.allclose(M, M.conj().T, atol=1e-10 * max(1.0, np.abs(M).max())):
            raise InvalidModelError("matrix must be symmetric/Hermitian")
        if np.linalg.eigvalsh((M + M.conj().T) / 2).min() <= 0:
            raise InvalidModelError("matrix must be positive definite")

    # -- constructors ----------------------------------------------------

    @classmethod
    def ar1(cls, p: int, rho: complex | float, sigma2: float = 1.0) -> "CovarianceModel":
        return cls("ar1", p, sigma2=sigma2, rho=rho)

    @classmethod
    def cs(cls, p: int, rho: float, sigma2: float = 1.0) -> "CovarianceModel":
        return cls("cs", p, sigma2=sigma2, rho=rho)

    @classmethod
    def banded1(cls, p: int, rho: float, sigma2: float = 1.0) -> "CovarianceModel":
        return cls("banded1", p, sigma2=sigma2, rho=rho)

    @classmethod
    def spiked(cls, low_rank: np.ndarray, alpha: float) -> "CovarianceModel":
        low_rank = np.asarray(low_rank)
        return cls("spiked", low_rank.shape[0], low_rank=low_rank, alpha=alpha)

    @classmethod
    def explicit(cls, matrix: np.ndarray) -> "CovarianceModel":
        matrix = np.asarray(matrix)
        return cls("explicit", matrix.shape[0], matrix=matrix)

    @property
    def is_complex(self) -> bool:
        if self.kind == "ar1":
            return bool(np.iscomplexobj(self.rho) and np.imag(self.rho) != 0)
        if self.kind == "spiked":
            return bool(np.iscomplexobj(self.low_rank))
        if self.kind == "explicit":
            return bool(np.iscomplexobj(self.matrix))
        return False

    def materialize(self) -> np.ndarray:
        return materialize(self)


def materialize(model: CovarianceModel) -> np.ndarray:
    """Dense covariance matrix of ``model``.

    The complex AR(1) variant has ``M[i, j] = sigma2 * rho**(j - i)`` on and
    above the diagonal and the conjugate below it.
    """
    p = model.p
    if model.kind == "ar1":
        rho = complex(model.rho) if model.is_complex else float(np.real(model.rho))
        i, j = np.indices((p, p))
        lag = np.abs(j - i)
        upper = model.sigma2 * np.power(rho, lag)
        M = np.where(j >= i, upper, np.conj(upper))
    elif model.kind == "cs":
        M = np.full((p, p), model.sigma2 * model.rho)
        np.fill_diagonal(M, model.sigma2)
    elif model.kind == "banded1":
        M = model.sigma2 * (np.eye(p) + model.rho * (np.eye(p, k=1) + np.eye(p, k=-1)))
    elif model.kind == "spiked":
        M = np.asarray(model.low_rank) + model.alpha * np.eye(p)
    else:
        M = np.array(model.matrix, copy=True)
    return (M + M.conj().T) / 2


def sphericity(M: np.ndarray) -> float:
    """``p tr(M^2) / tr(M)^2`` of a symmetric or Hermitian matrix."""
    M = np.asarray(M)
    p = M.shape[0]
    tr = np.real(np.trace(M))
    return float(p * np.real(np.vdot(M, M)) / tr**2)


def sphericity_closed_form(model: CovarianceModel) -> float:
    """Sphericity of ``model`` from its closed-form expression.

    Raises
    ------
    UnsupportedClosedFormError
        For the spiked family; materialize it and use :func:`sphericity`.
    """
    p = model.p
    if model.kind == "ar1":
        r2 = abs(model.rho) ** 2
        return float((p - p * r2**2 - 2 * r2 + 2 * r2 ** (p + 1)) / (p * (r2 - 1) ** 2))
    if model.kind == "banded1":
        return float(1 + 2 * (1 - 1 / p) * model.rho**2)
    if model.kind == "cs":
        return float(1 + (p - 1) * model.rho**2)
    if model.kind == "explicit":
        return sphericity(model.matrix)
    raise UnsupportedClosedFormError(
        "the spiked family has no closed-form sphericity; use sphericity(materialize(model))"
    )


def ar1_sphericity_limit(rho: complex | float) -> float:
    """Large-p limit ``(1 + |rho|^2) / (1 - |rho|^2)`` of the AR(1) sphericity."""
    r2 = abs(rho) ** 2
    return (1 + r2) / (1 - r2)


def spiked_sphericity_bound(model: CovarianceModel) -> float:
    """Upper bound ``r lambda_1^2 / (p alpha^2) + 1`` on the spiked sphericity."""
    if model.kind != "spiked":
        raise InvalidModelError("bound only defined for the spiked family")
    ev = np.linalg.eigvalsh(np.asarray(model.low_rank))
    tol = 1e-10 * max(1.0, np.abs(ev).max())
    r = int(np.sum(ev > tol))
    return r * ev.max() ** 2 / (model.p * model.alpha**2) + 1


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Hermitian square root via eigendecomposition; negative eigenvalues are zeroed."""
    w, V = np.linalg.eigh((M + M.conj().T) / 2)
    return (V * np.sqrt(np.clip(w, 0, None))) @ V.conj().T


@dataclass(frozen=True, eq=False)
class EllipticalLaw:
    """An elliptical distribution whose covariance is ``covariance``.

    ``nu`` is only used by the Student-t families and must exceed 4 so that
    fourth moments exist.
    """

    family: Family
    covariance: CovarianceModel
    mean: np.ndarray | None = None
    nu: float = np.inf

    def __post_init__(self) -> None:
        if self.family not in _FAMILIES:
            raise InvalidModelError(f"unknown family {self.family!r}")
        if self.family in ("t", "complex_t"):
            if not self.nu > 4:
                raise InvalidModelError(f"Student-t needs nu > 4 for finite fourth moments, got {self.nu}")
        if self.covariance.is_complex and not self.is_complex:
            raise InvalidModelError("complex covariance requires a complex family")
        if self.mean is not None:
            mu = np.asarray(self.mean)
            if mu.shape != (self.p,):
                raise InvalidModelError(f"mean has shape {mu.shape}, expected ({self.p},)")

    @property
    def p(self) -> int:
        return self.covariance.p

    @property
    def is_complex(self) -> bool:
        return self.family.startswith("complex")

    @property
    def kurtosis(self) -> float:
        """Population elliptical kurtosis (0 for Gaussian, ``2/(nu-4)`` for t)."""
        return 2.0 / (self.nu - 4) if self.family in ("t", "complex_t") else 0.0

    @cached_property
    def cov_matrix(self) -> np.ndarray:
        return materialize(self.covariance)

    @cached_property
    def sqrt_cov(self) -> np.ndarray:
        return psd_sqrt(self.cov_matrix)

    def with_mean(self, mean: np.ndarray | None) -> "EllipticalLaw":
        law = EllipticalLaw(self.family, self.covariance, mean, self.nu)
        # share cached factorizations
        for name in ("cov_matrix", "sqrt_cov"):
            if name in self.__dict__:
                law.__dict__[name] = self.__dict__[name]
        return law


def _modular_variate_sq(law: EllipticalLaw, n: int, rng: np.random.Generator) -> np.ndarray:
    p, nu = law.p, law.nu
    if law.family == "gaussian":
        return rng.chisquare(p, size=n)
    if law.family == "complex_gaussian":
        return rng.chisquare(2 * p, size=n) / 2
    dof = p if law.family == "t" else 2 * p
    return p * rng.f(dof, nu, size=n) * (nu - 2) / nu


def _sphere(p: int, n: int, complex_: bool, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((n, p))
    if complex_:
        z = z + 1j * rng.standard_normal((n, p))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def sample(
    law: EllipticalLaw,
    n: int,
    rng: np.random.Generator | np.random.SeedSequence | int | None = None,
    known_mean: bool = False,
) -> Dataset:
    """Draw ``n`` i.i.d. observations from ``law``.

    With ``known_mean=True`` the returned dataset carries the law's mean so
    that downstream estimators center on it.
    """
    if int(n) != n or n < 1:
        raise InvalidModelError(f"sample size must be a positive integer, got {n}")
    rng = as_generator(rng)
    u = _sphere(law.p, int(n), law.is_complex, rng)
    r = np.sqrt(_modular_variate_sq(law, int(n), rng))
    X = r[:, None] * (u @ law.sqrt_cov.T)
    mu = np.zeros(law.p) if law.mean is None else np.asarray(law.mean)
    X = X + mu
    return Dataset(X, known_mean=mu if known_mean else None)
