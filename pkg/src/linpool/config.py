"""YAML run configurations for the command-line interface.

Each command reads one YAML mapping validated by the matching schema below.
Unknown keys are rejected. Bundled configurations live in
``linpool/configs`` and can be referred to by name (``table1_ar1``).
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .models import CovarianceModel, EllipticalLaw
from .pooling import VARIANTS, PoolingConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CovarianceSection(_Strict):
    kind: Literal["ar1", "cs", "banded1", "explicit"]
    p: int = Field(gt=0)
    rho: float = 0.0
    rho_imag: float = 0.0
    sigma2: float = Field(1.0, gt=0)
    matrix: Optional[list[list[float]]] = None

    def build(self) -> CovarianceModel:
        if self.kind == "explicit":
            if self.matrix is None:
                raise ConfigError("covariance.matrix is required for kind 'explicit'")
            return CovarianceModel.explicit(np.array(self.matrix))
        rho: complex | float = complex(self.rho, self.rho_imag) if self.rho_imag else self.rho
        return getattr(CovarianceModel, self.kind)(self.p, rho, sigma2=self.sigma2)


class ClassSection(_Strict):
    family: Literal["gaussian", "t", "complex_gaussian", "complex_t"] = "gaussian"
    nu: Optional[float] = None
    covariance: CovarianceSection
    n: int = Field(gt=0)

    def law(self) -> EllipticalLaw:
        nu = self.nu if self.nu is not None else (8.0 if self.family.endswith("t") else float("inf"))
        return EllipticalLaw(self.family, self.covariance.build(), nu=nu)


Setup = Literal["table1_ar1", "table1_cs", "table1_mixed", "varying_k", "complex_ar1", "custom"]


class SimulateConfig(_Strict):
    """``linpool simulate``: a Monte Carlo NMSE experiment."""

    setup: Setup
    trials: int = Field(200, gt=0)
    seed: int = 0
    workers: int = Field(1, gt=0)
    estimators: Optional[list[str]] = None
    mean_mode: Literal["fixed", "resampled", "given"] = "fixed"
    classes: Optional[list[ClassSection]] = None
    K: Optional[int] = Field(None, gt=0)
    n: Optional[int] = Field(None, gt=1)

    @model_validator(mode="after")
    def _check_setup(self) -> "SimulateConfig":
        if self.setup == "custom" and not self.classes:
            raise ValueError("setup 'custom' needs a non-empty 'classes' list")
        if self.setup != "custom" and self.classes is not None:
            raise ValueError(f"'classes' is only allowed with setup 'custom', not {self.setup!r}")
        if self.setup == "varying_k" and self.K is None:
            raise ValueError("setup 'varying_k' needs 'K'")
        if self.setup == "complex_ar1" and self.n is None:
            raise ValueError("setup 'complex_ar1' needs 'n'")
        return self


class PoolSection(_Strict):
    variant: Literal["unconstrained", "nonneg", "nonneg_identity", "convex"] = "nonneg_identity"
    identity_lower_bound: Union[float, list[float]] = 1e-8
    identity_lb_scale: Optional[float] = None
    identity: bool = False
    approximate: bool = False

    def build(self) -> PoolingConfig:
        lb = self.identity_lower_bound
        return PoolingConfig(
            self.variant,
            tuple(lb) if isinstance(lb, list) else float(lb),
            self.identity_lb_scale,
            self.identity,
        )


class TargetSection(_Strict):
    kind: Literal["constant_correlation", "single_factor", "identity", "explicit"]
    samples: int = Field(1000, gt=1)
    matrix_path: Optional[str] = None


class ShrinkConfig(_Strict):
    """``linpool shrink``: multi-target shrinkage of one dataset."""

    pooling: PoolSection = PoolSection()
    targets: list[TargetSection]
    target_rows: Optional[int] = Field(None, gt=1)
    seed: int = 0


class BacktestSection(_Strict):
    """``linpool backtest``: one report row per (estimator, window) pair."""

    estimators: list[str] = ["linpool"]
    windows: list[int] = [60]
    rebalance: int = Field(20, gt=0)
    constrained: bool = False
    max_weight: float = Field(0.1, gt=0)
    annualization: float = Field(float(np.sqrt(250)), gt=0)
    target_window: Optional[int] = Field(40, ge=2)
    samples: int = Field(1000, gt=1)
    identity_lower_bound: float = Field(1e-8, gt=0)
    seed: int = 0
    workers: int = Field(1, gt=0)


class SscmDiagConfig(_Strict):
    """``linpool sscm-diag``: SSCM bias and SCM distance across dimensions."""

    kind: Literal["ar1", "cs", "banded1"] = "ar1"
    rho: float = 0.5
    sigma2: float = Field(1.0, gt=0)
    p_list: list[int] = [25, 100, 400]
    n: int = Field(100, gt=1)
    trials: int = Field(2000, gt=1)
    seed: int = 0


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        msg = "unknown key" if err["type"] == "extra_forbidden" else err["msg"]
        parts.append(f"{loc}: {msg}")
    return "; ".join(parts)


def bundled_configs() -> list[str]:
    root = resources.files("linpool") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def resolve_config_path(name: str) -> Path | None:
    """A filesystem path, or the bundled config of that name."""
    path = Path(name)
    if path.exists():
        return path
    bundled = resources.files("linpool") / "configs" / f"{name}.yaml"
    if bundled.is_file():
        return Path(str(bundled))
    return None


def load_config(name: str, schema: type[BaseModel]) -> BaseModel:
    """Parse and validate a YAML config; every failure is a :class:`ConfigError`."""
    path = resolve_config_path(name)
    if path is None:
        raise ConfigError(f"config {name!r} not found (bundled: {', '.join(bundled_configs())})")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    try:
        return schema.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"{path}: {_format_validation(exc)}") from None


__all__ = [
    "VARIANTS",
    "BacktestSection",
    "ClassSection",
    "CovarianceSection",
    "PoolSection",
    "ShrinkConfig",
    "SimulateConfig",
    "SscmDiagConfig",
    "bundled_configs",
    "load_config",
    "resolve_config_path",
]
