"""Run configuration: a flat key=value file plus command-line overrides."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Self

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.experiment_harness.constants import (
    DEFAULT_BETA,
    DEFAULT_CACHE_DIR,
    DEFAULT_DELTA,
    DEFAULT_DELTA_LEVELS,
    DEFAULT_GAMMA,
    DEFAULT_MMS_TOL,
    DEFAULT_N_SIDE,
    DEFAULT_N_SIDE_LEVELS,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_S,
    RHO_MAX,
    RHO_MIN,
)
from src.experiment_harness.experiment_types import (
    ExperimentKind,
    InitialDesignKind,
    SourceKind,
)
from src.nonlocal_topopt.exceptions import InvalidArgumentError
from src.nonlocal_topopt.kernel import KernelSpec
from src.nonlocal_topopt.optimizer import OcConfig
from src.nonlocal_topopt.quadrature import QuadratureBudget

logger = logging.getLogger(__name__)

_DEFAULT_BUDGET = QuadratureBudget()
_DEFAULT_OC = OcConfig()

# Experiments that never build a nonlocal kernel
LOCAL_EXPERIMENTS: frozenset[str] = frozenset({"local-optimize"})


class RunConfig(BaseModel):
    """All parameters of one harness run, validated on construction."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    experiment: ExperimentKind = "optimize"
    n_side: int = Field(default=DEFAULT_N_SIDE, ge=1)
    n_side_levels: tuple[int, ...] = DEFAULT_N_SIDE_LEVELS
    delta: float = Field(default=DEFAULT_DELTA, ge=0.0)
    delta_levels: tuple[float, ...] = DEFAULT_DELTA_LEVELS

    s: float = Field(default=DEFAULT_S, gt=0.0, lt=1.0)
    beta: float = Field(default=DEFAULT_BETA, ge=0.0)
    p: float = Field(default=1.0, ge=1.0, le=2.0)
    gamma: float = DEFAULT_GAMMA
    rho_min: float = Field(default=RHO_MIN, gt=0.0)
    rho_max: float = RHO_MAX

    source: SourceKind = "uniform"
    source_expression: str | None = None

    budget_k2: int = Field(default=_DEFAULT_BUDGET.identical, ge=1)
    budget_k1: int = Field(default=_DEFAULT_BUDGET.edge, ge=1)
    budget_k0: int = Field(default=_DEFAULT_BUDGET.vertex, ge=1)
    budget_near: int = Field(default=_DEFAULT_BUDGET.disjoint_near, ge=1)
    budget_far: int = Field(default=_DEFAULT_BUDGET.disjoint_straddling, ge=1)
    budget_min: int = Field(default=3, ge=1)
    budget_max: int = Field(default=15, ge=1)

    cg_tol: float = Field(default=1e-10, gt=0.0)
    cg_max_iter: int | None = Field(default=None, ge=1)
    mms_tol: float = Field(default=DEFAULT_MMS_TOL, gt=0.0)

    eta: float = Field(default=_DEFAULT_OC.eta, gt=0.0, lt=1.0)
    xi: float = Field(default=_DEFAULT_OC.xi, gt=0.0, le=1.0)
    stop_tol: float = Field(default=_DEFAULT_OC.stop_tol, gt=0.0)
    bisection_tol: float = Field(default=_DEFAULT_OC.bisection_tol, gt=0.0)
    max_outer_iter: int = Field(default=_DEFAULT_OC.max_outer_iter, ge=1)
    snapshot_every: int = Field(default=0, ge=0)

    output_dir: Path = DEFAULT_OUTPUT_DIR
    cache_dir: Path | None = DEFAULT_CACHE_DIR
    local_reference: bool = True
    initial_design: InitialDesignKind = "uniform"
    seed: int = 0

    @field_validator("n_side_levels", "delta_levels", mode="before")
    @classmethod
    def _split_list(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(item.strip() for item in value.split(",") if item.strip())
        return value

    @field_validator("cg_max_iter", "cache_dir", "source_expression", mode="before")
    @classmethod
    def _none_literal(cls, value: Any) -> Any:
        if isinstance(value, str) and value.strip().lower() in ("", "none"):
            return None
        return value

    @field_validator("n_side_levels")
    @classmethod
    def _positive_levels(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if not value or any(n < 1 for n in value):
            msg = "n_side_levels needs at least one positive entry"
            raise ValueError(msg)
        return value

    @field_validator("delta_levels")
    @classmethod
    def _positive_deltas(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not value or any(d <= 0.0 for d in value):
            msg = "delta_levels needs at least one positive entry"
            raise ValueError(msg)
        return value

    @model_validator(mode="after")
    def _check_ranges(self) -> Self:
        if not self.rho_min < self.gamma < self.rho_max:
            msg = (
                f"need rho_min < gamma < rho_max, got "
                f"{self.rho_min}, {self.gamma}, {self.rho_max}"
            )
            raise ValueError(msg)
        if self.delta <= 0.0 and self.experiment not in LOCAL_EXPERIMENTS:
            msg = f"delta must be positive for {self.experiment}"
            raise ValueError(msg)
        if self.source == "expression" and not self.source_expression:
            msg = "source=expression needs source_expression"
            raise ValueError(msg)
        if self.budget_min > self.budget_max:
            msg = f"budget_min={self.budget_min} exceeds budget_max={self.budget_max}"
            raise ValueError(msg)
        return self

    def kernel_spec(self, delta: float | None = None) -> KernelSpec:
        """Normalized kernel for ``delta`` (the configured one by default)."""
        return KernelSpec.create(self.delta if delta is None else delta, self.s, self.beta)

    def budget(self) -> QuadratureBudget:
        """Points per dimension for every pair class."""
        return QuadratureBudget(
            identical=self.budget_k2,
            edge=self.budget_k1,
            vertex=self.budget_k0,
            disjoint_near=self.budget_near,
            disjoint_straddling=self.budget_far,
        )

    def oc_config(self) -> OcConfig:
        """Optimality-criteria parameters."""
        return OcConfig(
            eta=self.eta,
            xi=self.xi,
            stop_tol=self.stop_tol,
            bisection_tol=self.bisection_tol,
            max_outer_iter=self.max_outer_iter,
        )

    def design_bounds(self) -> dict[str, float]:
        """Keyword arguments shared by every design of the run."""
        return {"rho_min": self.rho_min, "rho_max": self.rho_max, "p": self.p}


def parse_key_values(text: str, *, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    values: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            msg = f"{source}:{number}: expected key=value, got {raw.strip()!r}"
            raise InvalidArgumentError(msg)
        values[key.strip()] = value.strip()
    return values


def load_run_config(
    path: Path | None = None,
    overrides: list[str] | None = None,
    **fixed: Any,
) -> RunConfig:
    """Merge the config file, ``--set`` overrides and fixed values, then validate.

    Later sources win: file < overrides < ``fixed``.

    Raises:
        pydantic.ValidationError: When a value falls outside its admissible range.
        InvalidArgumentError: When the file or an override is malformed.
    """
    raw: dict[str, Any] = {}
    if path is not None:
        logger.info(f"Reading configuration from {path}")
        raw.update(parse_key_values(path.read_text(encoding="utf-8"), source=str(path)))
    if overrides:
        raw.update(parse_key_values("\n".join(overrides), source="--set"))
    raw.update({key: value for key, value in fixed.items() if value is not None})
    return RunConfig.model_validate(raw)
