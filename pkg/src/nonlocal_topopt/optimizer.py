"""Optimality-criteria loop for volume-constrained compliance minimization."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from mashumaro import DataClassDictMixin, field_options
from mashumaro.config import BaseConfig
from scipy import sparse

from src.nonlocal_topopt.assembly import DesignField, NonlocalAssembler, PairTable, assembler_for
from src.nonlocal_topopt.exceptions import (
    InvalidArgumentError,
    OptimizationAbortedError,
    SolverConvergenceError,
)
from src.nonlocal_topopt.grid import PairList, TriangleMesh
from src.nonlocal_topopt.solve import (
    SolveReport,
    StateField,
    assemble_local_stiffness,
    compliance,
    local_gradient,
    pcg_solve,
)
from src.nonlocal_topopt.types import FloatArray, StateModelProtocol

logger = logging.getLogger(__name__)

LAMBDA_BRACKET = 1e12
LAMBDA_EXPANSIONS = 5
MAX_BISECTIONS = 200

type StopReason = Literal["converged", "stationary", "max-iterations"]


@dataclass(frozen=True)
class OcConfig(DataClassDictMixin):
    """Optimality-criteria parameters."""

    eta: float = 0.2
    xi: float = 0.5
    stop_tol: float = 1e-4
    bisection_tol: float = 1e-8
    max_outer_iter: int = 200

    def __post_init__(self) -> None:
        """Validate ranges."""
        if not 0.0 < self.eta < 1.0:
            msg = f"move limit eta must lie in (0, 1), got {self.eta}"
            raise InvalidArgumentError(msg)
        if not 0.0 < self.xi <= 1.0:
            msg = f"damping xi must lie in (0, 1], got {self.xi}"
            raise InvalidArgumentError(msg)
        if self.stop_tol <= 0.0 or self.bisection_tol <= 0.0:
            msg = "stopping and bisection tolerances must be positive"
            raise InvalidArgumentError(msg)
        if self.max_outer_iter < 1:
            msg = f"max_outer_iter must be >= 1, got {self.max_outer_iter}"
            raise InvalidArgumentError(msg)


@dataclass(frozen=True)
class OcRecord(DataClassDictMixin):
    """One row of the optimization history."""

    iter: int
    J: float
    design_change: float
    lam: float = field(metadata=field_options(alias="lambda"))
    volume: float

    class Config(BaseConfig):
        """Serialize ``lam`` under its table column name."""

        serialize_by_alias = True


@dataclass
class OcHistory:
    """Per-iteration records plus how the loop ended."""

    records: list[OcRecord] = field(default_factory=list)
    stop_reason: StopReason = "max-iterations"
    final_compliance: float = math.nan

    @property
    def iterations(self) -> int:
        """Number of OC updates taken."""
        return len(self.records)

    @property
    def converged(self) -> bool:
        """Whether the design change fell below the stopping tolerance."""
        return self.stop_reason in ("converged", "stationary")


class NonlocalStateModel:
    """Nonlocal state problem K(ρ) u = b on a fixed pair list and table."""

    def __init__(
        self,
        pairs: PairList,
        assembler: NonlocalAssembler,
        load: FloatArray,
        *,
        cg_tol: float = 1e-10,
        cg_max_iter: int | None = None,
    ) -> None:
        """Bind the mesh data and the load vector on the free nodes."""
        self.mesh: TriangleMesh = pairs.mesh
        self.assembler = assembler
        self.load = load
        self.cg_tol = cg_tol
        self.cg_max_iter = cg_max_iter
        self.reports: list[SolveReport] = []

    @property
    def element_areas(self) -> FloatArray:
        """Areas of all triangles of Ω_δ."""
        return self.mesh.areas

    @property
    def domain_area(self) -> float:
        """|Ω|."""
        return self.mesh.interior_area

    def stiffness(self, design: DesignField) -> sparse.csr_matrix:
        """K(ρ) on the free nodes."""
        return self.assembler.stiffness(design)

    def solve(self, design: DesignField) -> tuple[StateField, float]:
        """State and compliance for ``design``."""
        K = self.assembler.stiffness(design)
        state, report = pcg_solve(
            K,
            self.load,
            tol=self.cg_tol,
            max_iter=self.cg_max_iter,
            free_nodes=self.mesh.free_nodes,
            n_nodes=self.mesh.n_nodes,
        )
        self.reports.append(report)
        return state, compliance(state, self.load)

    def gradient(self, design: DesignField, state: StateField) -> FloatArray:
        """Pair-energy gradient of the compliance."""
        return self.assembler.gradient(design, state.values)


class LocalStateModel:
    """Local P1 state problem -div(ρ^p ∇u) = f on Ω."""

    def __init__(
        self,
        mesh: TriangleMesh,
        load: FloatArray,
        *,
        cg_tol: float = 1e-10,
        cg_max_iter: int | None = None,
    ) -> None:
        """Bind the mesh and the load vector on the free nodes."""
        self.mesh = mesh
        self.load = load
        self.cg_tol = cg_tol
        self.cg_max_iter = cg_max_iter
        self.reports: list[SolveReport] = []

    @property
    def element_areas(self) -> FloatArray:
        """Triangle areas."""
        return self.mesh.areas

    @property
    def domain_area(self) -> float:
        """|Ω|."""
        return self.mesh.interior_area

    def solve(self, design: DesignField) -> tuple[StateField, float]:
        """State and compliance for ``design``."""
        K = assemble_local_stiffness(self.mesh, design.conductivity)
        state, report = pcg_solve(
            K,
            self.load,
            tol=self.cg_tol,
            max_iter=self.cg_max_iter,
            free_nodes=self.mesh.free_nodes,
            n_nodes=self.mesh.n_nodes,
        )
        self.reports.append(report)
        return state, compliance(state, self.load)

    def gradient(self, design: DesignField, state: StateField) -> FloatArray:
        """-p ρ^{p-1} |T| |∇u|²."""
        return local_gradient(self.mesh, design.rho, design.p, state)


def nonlocal_state_model(
    pairs: PairList,
    table: PairTable,
    load: FloatArray,
    *,
    cg_tol: float = 1e-10,
    cg_max_iter: int | None = None,
) -> NonlocalStateModel:
    """State model backed by the shared assembler of (pairs, table)."""
    return NonlocalStateModel(
        pairs, assembler_for(pairs, table), load, cg_tol=cg_tol, cg_max_iter=cg_max_iter
    )


def compliance_gradient(
    design: DesignField, u: StateField, pairs: PairList, table: PairTable
) -> FloatArray:
    """∂c/∂ρ_e of the nonlocal compliance; every entry is <= 0."""
    return assembler_for(pairs, table).gradient(design, u.values)


def _move_limits(design: DesignField, eta: float) -> tuple[FloatArray, FloatArray]:
    lower = np.maximum(design.rho_min, (1.0 - eta) * design.rho)
    upper = np.minimum(design.rho_max, (1.0 + eta) * design.rho)
    return lower, upper


def _update(design: DesignField, g: FloatArray, lam: float, config: OcConfig) -> FloatArray:
    ratio = np.where(g < 0.0, -g / (lam * design.areas), 0.0)
    lower, upper = _move_limits(design, config.eta)
    return np.clip(design.rho * ratio**config.xi, lower, upper)


def oc_update(design: DesignField, g: FloatArray, lam: float, config: OcConfig) -> DesignField:
    """ρ_new = clamp(ρ (-g / (λ a))^ξ) into the move-limited box.

    Elements with g >= 0 get no growth factor and drop to their lower limit.
    """
    if not lam > 0.0:
        msg = f"Lagrange multiplier must be positive, got {lam}"
        raise InvalidArgumentError(msg)
    if g.shape != design.rho.shape:
        msg = f"gradient has shape {g.shape}, design {design.rho.shape}"
        raise InvalidArgumentError(msg)
    positive = int(np.count_nonzero(g > 0.0))
    if positive:
        logger.warning(f"{positive} elements with positive sensitivity drop to their lower limit")
    return design.with_rho(_update(design, g, lam, config))


def find_multiplier(design: DesignField, g: FloatArray, config: OcConfig) -> float:
    """Positive λ with Σ ρ_new(λ) a = γ |Ω|, by bisection on log λ.

    The bracket widens by decades on both sides. When even the smallest λ keeps the volume
    below target the constraint is inactive and that λ is returned. When the volume cannot
    be brought down to target within the move limits, the largest λ tried is returned with
    a warning.
    """
    target = design.target_volume
    descent = g < 0.0
    if not np.any(descent):
        msg = "no element has negative sensitivity"
        raise InvalidArgumentError(msg)

    def volume(lam: float) -> float:
        return float(_update(design, g, lam, config) @ design.areas)

    centre = float(np.median(-g[descent] / design.areas[descent]))
    low = centre / LAMBDA_BRACKET
    high = centre * LAMBDA_BRACKET
    expansions = 0
    while volume(low) <= target:
        if expansions == LAMBDA_EXPANSIONS:
            logger.debug(f"Volume constraint inactive at lambda={low:.3e}")
            return low
        high = low
        low /= 10.0
        expansions += 1
    expansions = 0
    while volume(high) > target:
        if expansions == LAMBDA_EXPANSIONS:
            logger.warning(
                f"Volume {volume(high):.6g} above target {target:.6g} even at lambda={high:.3e}; "
                "move limits do not allow the constraint to be met this step"
            )
            return high
        high *= 10.0
        expansions += 1

    for _ in range(MAX_BISECTIONS):
        mid = math.sqrt(low * high)
        v = volume(mid)
        if abs(v - target) <= config.bisection_tol * target:
            return mid
        if v > target:
            low = mid
        else:
            high = mid
        if high / low - 1.0 < 1e-15:
            break
    return high


def design_change(old: DesignField, new: DesignField) -> float:
    """Area-weighted L² norm of ρ_new - ρ_old."""
    return float(np.sqrt(np.sum(old.areas * (new.rho - old.rho) ** 2)))


def optimize(
    model: StateModelProtocol,
    initial: DesignField,
    config: OcConfig,
    *,
    on_iteration: Callable[[int, DesignField, StateField], None] | None = None,
) -> tuple[DesignField, StateField, OcHistory]:
    """Run OC updates until the design change drops below ``config.stop_tol``.

    Returns the final design, its state and the history. J of the final design is stored
    in ``history.final_compliance``.
    """
    if initial.volume() > initial.target_volume * (1.0 + config.bisection_tol):
        msg = (
            f"initial design volume {initial.volume():.6g} exceeds "
            f"target {initial.target_volume:.6g}"
        )
        raise InvalidArgumentError(msg)

    history = OcHistory()
    design = initial
    logger.info(
        f"=== OC loop: {design.rho.size} elements, gamma={design.gamma}, p={design.p} ==="
    )
    for iteration in range(1, config.max_outer_iter + 1):
        try:
            state, objective = model.solve(design)
        except SolverConvergenceError as e:
            msg = f"state solve failed at OC iteration {iteration}: {e}"
            raise OptimizationAbortedError(msg, history=history) from e
        g = model.gradient(design, state)
        if on_iteration is not None:
            on_iteration(iteration, design, state)

        if not np.any(g < 0.0):
            history.records.append(
                OcRecord(iteration, objective, 0.0, math.nan, design.volume())
            )
            history.stop_reason = "stationary"
            logger.info(f"Stationary design at iteration {iteration}: no descent direction")
            break

        lam = find_multiplier(design, g, config)
        updated = oc_update(design, g, lam, config)
        change = design_change(design, updated)
        history.records.append(OcRecord(iteration, objective, change, lam, updated.volume()))
        logger.info(
            f"iter={iteration} J={objective:.8e} change={change:.3e} "
            f"lambda={lam:.3e} volume={updated.volume():.6f}"
        )
        design = updated
        if change < config.stop_tol:
            history.stop_reason = "converged"
            break
    else:
        logger.warning(f"OC loop hit max_outer_iter={config.max_outer_iter}")

    try:
        state, objective = model.solve(design)
    except SolverConvergenceError as e:
        msg = f"final state solve failed: {e}"
        raise OptimizationAbortedError(msg, history=history) from e
    history.final_compliance = objective
    logger.info(
        f"OC finished ({history.stop_reason}) after {history.iterations} iterations, "
        f"J*={objective:.8e}"
    )
    return design, state, history
