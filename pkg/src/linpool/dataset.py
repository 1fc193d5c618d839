"""Observation containers shared by the estimators and the simulator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError, ShapeError


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """One class sample: an ``n x p`` real or complex matrix.

    Parameters
    ----------
    X : array-like of shape (n, p)
        Observations in rows.
    known_mean : array-like of shape (p,), optional
        Population mean, if known. Estimators then center on it instead of
        estimating a location.
    """

    X: np.ndarray
    known_mean: np.ndarray | None = None

    def __post_init__(self) -> None:
        X = np.asarray(self.X)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise ShapeError(f"observations must be a 2-D array, got ndim={X.ndim}")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError(f"empty dataset of shape {X.shape}")
        if not np.issubdtype(X.dtype, np.complexfloating):
            X = X.astype(float, copy=False)
        if not np.all(np.isfinite(X)):
            raise DataError("observations contain non-finite entries")
        object.__setattr__(self, "X", _frozen(X))
        if self.known_mean is not None:
            mu = np.asarray(self.known_mean, dtype=X.dtype).ravel()
            if mu.shape != (X.shape[1],):
                raise ShapeError(f"known_mean has length {mu.size}, expected {X.shape[1]}")
            object.__setattr__(self, "known_mean", _frozen(mu))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def is_complex(self) -> bool:
        return bool(np.iscomplexobj(self.X))

    @property
    def field(self) -> str:
        return "complex" if self.is_complex else "real"


@dataclass(frozen=True, eq=False)
class ClassCollection(Sequence[Dataset]):
    """K mutually independent datasets of a common dimension."""

    classes: tuple[Dataset, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        classes = tuple(c if isinstance(c, Dataset) else Dataset(c) for c in self.classes)
        if not classes:
            raise DataError("a class collection needs at least one class")
        dims = [c.p for c in classes]
        if len(set(dims)) != 1:
            listing = ", ".join(f"class {k + 1}: p={d}" for k, d in enumerate(dims))
            raise ShapeError(f"classes have different dimensions ({listing})")
        object.__setattr__(self, "classes", classes)

    @classmethod
    def of(cls, items: Iterable[Dataset | np.ndarray]) -> "ClassCollection":
        if isinstance(items, ClassCollection):
            return items
        return cls(tuple(items))

    def __getitem__(self, k):  # type: ignore[override]
        return self.classes[k]

    def __len__(self) -> int:
        return len(self.classes)

    def __iter__(self) -> Iterator[Dataset]:
        return iter(self.classes)

    @property
    def K(self) -> int:
        return len(self.classes)

    @property
    def p(self) -> int:
        return self.classes[0].p

    @property
    def sizes(self) -> np.ndarray:
        return np.array([c.n for c in self.classes])

    @property
    def is_complex(self) -> bool:
        return any(c.is_complex for c in self.classes)
