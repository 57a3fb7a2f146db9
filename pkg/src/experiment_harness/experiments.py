"""Experiment handlers producing the result tables of every harness command."""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from mashumaro import DataClassDictMixin

from src.experiment_harness.constants import (
    CROSS_CHECK_COLUMNS,
    DELTA_CONVERGENCE_COLUMNS,
    GAMMA_TEST_P,
    GRID_INFO_COLUMNS,
    HISTORY_COLUMNS,
    MMS_CONVERGENCE_COLUMNS,
    QUAD_CONVERGENCE_COLUMNS,
    SUMMARY_COLUMNS,
)
from src.experiment_harness.manufactured import (
    gamma_test_density,
    gamma_test_rhs,
    gamma_test_solution,
    mms_solution,
    mms_source,
    source_for,
)
from src.nonlocal_topopt.assembly import (
    DesignField,
    PairTable,
    assemble_load,
    assemble_stiffness,
    cached_reference_pairs,
    initial_design,
)
from src.nonlocal_topopt.exceptions import InvalidArgumentError
from src.nonlocal_topopt.grid import PairList, TriangleMesh, build_grid, enumerate_pairs
from src.nonlocal_topopt.optimizer import (
    LocalStateModel,
    NonlocalStateModel,
    OcHistory,
    nonlocal_state_model,
    optimize,
)
from src.nonlocal_topopt.quadrature import quadrature_convergence, representative_pairs
from src.nonlocal_topopt.solve import l2_error, local_solve, pcg_solve

if TYPE_CHECKING:
    from collections.abc import Callable

    from src.experiment_harness.config import RunConfig
    from src.experiment_harness.experiment_types import (
        ExperimentKind,
        ExperimentProcessorProtocol,
        ResultRows,
    )
    from src.nonlocal_topopt.kernel import KernelSpec
    from src.nonlocal_topopt.quadrature import QuadratureErrorRow
    from src.nonlocal_topopt.solve import StateField
    from src.nonlocal_topopt.types import SourceFunction, StateModelProtocol

logger = logging.getLogger(__name__)

# Extra points per dimension of the self-refinement reference in quad-convergence
QUAD_REFERENCE_EXTRA = 10

# Cells per horizon for a disjoint pair of diameter below δ to exist (needs δ > √5 · h_side)
QUAD_MIN_CELLS_PER_DELTA = 3

# Amplitude of the seeded perturbation of the ramp start design
RAMP_NOISE = 0.1


@dataclass(frozen=True)
class GridInfoRow(DataClassDictMixin):
    """Sizes of one mesh and its pair list."""

    n_side: int
    delta: float
    halo_layers: int
    n_nodes: int
    n_triangles: int
    n_interior: int
    n_free: int
    n_pairs: int
    h: float


@dataclass(frozen=True)
class MmsConvergenceRow(DataClassDictMixin):
    """Relative L²(Ω_δ) error of the manufactured solution at one refinement level."""

    n_side: int
    h: float
    rel_l2_error: float


@dataclass(frozen=True)
class DeltaConvergenceRow(DataClassDictMixin):
    """L²(Ω) distance to the local solution at one (δ, h); δ = 0 is the local solver."""

    delta: float
    n_side: int
    h: float
    l2_error: float


@dataclass(frozen=True)
class SummaryRow(DataClassDictMixin):
    """Optimal compliance J* and OC iteration count N of one run."""

    delta: float
    h: float
    J_star: float
    N: int


@dataclass(frozen=True)
class CrossCheckRow(DataClassDictMixin):
    """Compliance of the design optimized at design_delta evaluated at eval_delta."""

    design_delta: float
    eval_delta: float
    compliance: float


@dataclass(frozen=True, eq=False)
class NonlocalProblem:
    """Mesh, pair list and reference table of one (n_side, δ)."""

    spec: KernelSpec
    mesh: TriangleMesh
    pairs: PairList
    table: PairTable


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    """Outcome of one OC run."""

    mesh: TriangleMesh
    design: DesignField
    state: StateField
    history: OcHistory


def _delta_label(delta: float) -> str:
    return f"delta{delta:g}"


def ramp_design(
    mesh: TriangleMesh, gamma: float, seed: int, **kwargs: float
) -> DesignField:
    """Feasible start increasing in x with a seeded perturbation, at volume γ|Ω|."""
    domain_area = float(kwargs.pop("domain_area", mesh.interior_area))
    rho_min = float(kwargs.get("rho_min", 1e-3))
    rho_max = float(kwargs.get("rho_max", 1.0))
    rng = np.random.default_rng(seed)
    raw = 0.5 + mesh.centroids[:, 0] + RAMP_NOISE * rng.random(mesh.n_triangles)
    target = gamma * domain_area
    rho = np.clip(raw * target / float(raw @ mesh.areas), rho_min, rho_max)
    # clipping at rho_min can only add volume
    excess = float(rho @ mesh.areas) - target
    if excess > 0.0:
        movable = rho > rho_min
        rho[movable] -= excess / float(mesh.areas[movable].sum())
        rho = np.clip(rho, rho_min, rho_max)
    if float(rho @ mesh.areas) > target * (1.0 + 1e-12):
        msg = f"ramp start cannot meet volume {target:.6g} within the bounds"
        raise InvalidArgumentError(msg)
    return DesignField(rho=rho, areas=mesh.areas, gamma=gamma, domain_area=domain_area, **kwargs)


def best_designs(rows: list[CrossCheckRow]) -> dict[float, CrossCheckRow]:
    """Cheapest design under each evaluation horizon."""
    best: dict[float, CrossCheckRow] = {}
    for row in rows:
        current = best.get(row.eval_delta)
        if current is None or row.compliance < current.compliance:
            best[row.eval_delta] = row
    return best


def resample_design(design: DesignField, source: TriangleMesh, target: TriangleMesh) -> DesignField:
    """Transfer a design by cell containment of the target centroids; gaps get ρ̲."""
    index = source.locate(target.centroids)
    rho = np.where(index >= 0, design.rho[np.maximum(index, 0)], design.rho_min)
    return DesignField(
        rho=rho,
        areas=target.areas,
        rho_min=design.rho_min,
        rho_max=design.rho_max,
        gamma=design.gamma,
        p=design.p,
        domain_area=target.interior_area,
    )


class ExperimentRunner:
    """Runs the harness experiments and hands every table to the processor."""

    def __init__(self, processor: ExperimentProcessorProtocol, config: RunConfig) -> None:
        """Initialize with the result processor and the validated run configuration."""
        self.processor = processor
        self.config = config
        self._problems: dict[tuple[int, float], NonlocalProblem] = {}

    # Shared building blocks

    def problem(self, n_side: int, delta: float) -> NonlocalProblem:
        """Mesh, pairs and reference table for (n_side, δ), built once per run."""
        key = (n_side, delta)
        if key not in self._problems:
            spec = self.config.kernel_spec(delta)
            mesh = build_grid(n_side, delta)
            pairs = enumerate_pairs(mesh, delta)
            table = cached_reference_pairs(mesh, spec, self.config.budget(), self.config.cache_dir)
            self._problems[key] = NonlocalProblem(spec=spec, mesh=mesh, pairs=pairs, table=table)
        return self._problems[key]

    def start_design(self, mesh: TriangleMesh, *, domain_area: float | None = None) -> DesignField:
        """Initial OC design selected by ``config.initial_design``."""
        config = self.config
        area = mesh.interior_area if domain_area is None else domain_area
        if config.initial_design == "ramp":
            return ramp_design(
                mesh, config.gamma, config.seed, domain_area=area, **config.design_bounds()
            )
        return initial_design(mesh, config.gamma, domain_area=area, **config.design_bounds())

    def _solve_nonlocal(
        self, problem: NonlocalProblem, design: DesignField, source: SourceFunction | float
    ) -> StateField:
        K = assemble_stiffness(problem.mesh, problem.pairs, problem.table, design)
        load = assemble_load(problem.mesh, source)
        state, _ = pcg_solve(
            K,
            load,
            tol=self.config.cg_tol,
            max_iter=self.config.cg_max_iter,
            free_nodes=problem.mesh.free_nodes,
            n_nodes=problem.mesh.n_nodes,
        )
        return state

    def _snapshot_callback(
        self, kind: ExperimentKind, label: str, mesh: TriangleMesh
    ) -> Callable[[int, DesignField, StateField], None] | None:
        every = self.config.snapshot_every
        if every == 0:
            return None

        def snapshot(iteration: int, design: DesignField, state: StateField) -> None:
            if iteration % every == 0:
                self.processor.process_fields(
                    kind,
                    f"{label}_iter{iteration:04d}",
                    mesh,
                    rho=design.rho,
                    p=design.p,
                    u=state.values,
                )

        return snapshot

    def _run_oc(
        self,
        kind: ExperimentKind,
        label: str,
        mesh: TriangleMesh,
        model: StateModelProtocol,
        initial: DesignField,
    ) -> OptimizationResult:
        design, state, history = optimize(
            model,
            initial,
            self.config.oc_config(),
            on_iteration=self._snapshot_callback(kind, label, mesh),
        )
        self.processor.process_table(
            kind, f"history_{label}", HISTORY_COLUMNS, list, history.records
        )
        self.processor.process_fields(
            kind, f"final_{label}", mesh, rho=design.rho, p=design.p, u=state.values
        )
        return OptimizationResult(mesh=mesh, design=design, state=state, history=history)

    def optimize_nonlocal(
        self, delta: float, kind: ExperimentKind = "optimize"
    ) -> OptimizationResult:
        """OC run of the nonlocal problem at horizon δ on the configured grid."""
        problem = self.problem(self.config.n_side, delta)
        load = assemble_load(problem.mesh, source_for(self.config, problem.spec))
        model = nonlocal_state_model(
            problem.pairs,
            problem.table,
            load,
            cg_tol=self.config.cg_tol,
            cg_max_iter=self.config.cg_max_iter,
        )
        logger.info(f"=== Optimizing at delta={delta}, n_side={self.config.n_side} ===")
        return self._run_oc(
            kind, _delta_label(delta), problem.mesh, model, self.start_design(problem.mesh)
        )

    def optimize_local(self, kind: ExperimentKind = "local-optimize") -> OptimizationResult:
        """OC run of the local (δ = 0) problem on the interior grid."""
        mesh = build_grid(self.config.n_side, 0.0)
        load = assemble_load(mesh, source_for(self.config))
        model = LocalStateModel(
            mesh, load, cg_tol=self.config.cg_tol, cg_max_iter=self.config.cg_max_iter
        )
        logger.info(f"=== Optimizing the local problem, n_side={self.config.n_side} ===")
        return self._run_oc(kind, _delta_label(0.0), mesh, model, self.start_design(mesh))

    # Result tables

    def run_grid_info(self) -> list[GridInfoRow]:
        """Mesh and pair-list sizes for the configured (n_side, δ)."""
        mesh = build_grid(self.config.n_side, self.config.delta)
        pairs = enumerate_pairs(mesh, self.config.delta)
        self.processor.process_fields("grid-info", f"mesh_n{mesh.n_side}", mesh)
        return [
            GridInfoRow(
                n_side=mesh.n_side,
                delta=self.config.delta,
                halo_layers=mesh.halo_layers,
                n_nodes=mesh.n_nodes,
                n_triangles=mesh.n_triangles,
                n_interior=mesh.n_interior,
                n_free=mesh.n_free,
                n_pairs=len(pairs),
                h=mesh.h,
            )
        ]

    def run_quad_convergence(self) -> list[QuadratureErrorRow]:
        """Relative block error per singularity class over budget_min..budget_max."""
        config = self.config
        n_side = max(config.n_side, math.ceil(QUAD_MIN_CELLS_PER_DELTA / config.delta))
        if n_side > config.n_side:
            logger.info(f"Refining to n_side={n_side} so every pair class has a representative")
        mesh = build_grid(n_side, config.delta)
        pairs = representative_pairs(mesh, config.delta)
        levels = range(config.budget_min, config.budget_max + 1)
        return quadrature_convergence(
            pairs,
            config.kernel_spec(),
            levels,
            reference_points=config.budget_max + QUAD_REFERENCE_EXTRA,
        )

    def run_h_convergence(self) -> list[MmsConvergenceRow]:
        """Manufactured-solution error with κ ≡ 1 over ``n_side_levels``."""
        rows = []
        for n_side in self.config.n_side_levels:
            problem = self.problem(n_side, self.config.delta)
            mesh = problem.mesh
            design = DesignField.uniform(
                1.0,
                mesh.areas,
                rho_min=self.config.rho_min,
                rho_max=max(self.config.rho_max, 1.0),
                gamma=self.config.gamma,
                domain_area=mesh.interior_area,
            )
            state = self._solve_nonlocal(
                problem, design, mms_source(problem.spec, self.config.mms_tol)
            )
            error = l2_error(mesh, state, mms_solution, region="all", relative=True)
            logger.info(f"n_side={n_side} h={mesh.h:.4e} rel_l2_error={error:.6e}")
            rows.append(MmsConvergenceRow(n_side=n_side, h=mesh.h, rel_l2_error=error))
        errors = [row.rel_l2_error for row in rows]
        if any(later >= earlier for earlier, later in zip(errors, errors[1:], strict=False)):
            logger.warning(f"Manufactured-solution errors do not decrease: {errors}")
        return rows

    def run_delta_convergence(self) -> list[DeltaConvergenceRow]:
        """L²(Ω) error against the local solution for every δ and n_side, plus δ = 0."""
        config = self.config
        density = functools.partial(
            gamma_test_density, rho_min=config.rho_min, rho_max=config.rho_max
        )
        source = functools.partial(gamma_test_rhs, rho_min=config.rho_min, rho_max=config.rho_max)
        rows = []
        for delta in config.delta_levels:
            for n_side in config.n_side_levels:
                problem = self.problem(n_side, delta)
                mesh = problem.mesh
                centroids = mesh.centroids
                design = DesignField(
                    rho=density(centroids[:, 0], centroids[:, 1]),
                    areas=mesh.areas,
                    rho_min=config.rho_min,
                    rho_max=config.rho_max,
                    gamma=config.gamma,
                    p=GAMMA_TEST_P,
                    domain_area=mesh.interior_area,
                )
                state = self._solve_nonlocal(problem, design, source)
                error = l2_error(mesh, state, gamma_test_solution, region="interior")
                logger.info(f"delta={delta} n_side={n_side} l2_error={error:.6e}")
                rows.append(
                    DeltaConvergenceRow(delta=delta, n_side=n_side, h=mesh.h, l2_error=error)
                )

        for n_side in config.n_side_levels:
            mesh = build_grid(n_side, 0.0)
            centroids = mesh.centroids
            kappa = density(centroids[:, 0], centroids[:, 1]) ** GAMMA_TEST_P
            state, _ = local_solve(
                mesh,
                kappa,
                assemble_load(mesh, source),
                tol=config.cg_tol,
                max_iter=config.cg_max_iter,
            )
            error = l2_error(mesh, state, gamma_test_solution, region="interior")
            logger.info(f"local n_side={n_side} l2_error={error:.6e}")
            rows.append(DeltaConvergenceRow(delta=0.0, n_side=n_side, h=mesh.h, l2_error=error))
        return rows

    def run_optimize(self) -> list[SummaryRow]:
        """Nonlocal OC run, followed by the local reference for p = 1."""
        config = self.config
        result = self.optimize_nonlocal(config.delta)
        rows = [
            SummaryRow(
                delta=config.delta,
                h=result.mesh.h,
                J_star=result.history.final_compliance,
                N=result.history.iterations,
            )
        ]
        if config.p == 1.0 and config.local_reference:
            local = self.optimize_local(kind="optimize")
            rows.append(
                SummaryRow(
                    delta=0.0,
                    h=local.mesh.h,
                    J_star=local.history.final_compliance,
                    N=local.history.iterations,
                )
            )
        return rows

    def run_local_optimize(self) -> list[SummaryRow]:
        """Local OC run alone."""
        result = self.optimize_local()
        return [
            SummaryRow(
                delta=0.0,
                h=result.mesh.h,
                J_star=result.history.final_compliance,
                N=result.history.iterations,
            )
        ]

    def run_cross_check(self) -> list[CrossCheckRow]:
        """Compliance of every δ_i-optimal design under every horizon δ_j."""
        config = self.config
        deltas = config.delta_levels
        designs = {delta: self.optimize_nonlocal(delta, kind="cross-check") for delta in deltas}
        rows = []
        for design_delta in deltas:
            optimized = designs[design_delta]
            for eval_delta in deltas:
                problem = self.problem(config.n_side, eval_delta)
                design = resample_design(optimized.design, optimized.mesh, problem.mesh)
                model = self._evaluation_model(problem)
                _, value = model.solve(design)
                logger.info(
                    f"design delta={design_delta} evaluated at delta={eval_delta}: J={value:.8e}"
                )
                rows.append(
                    CrossCheckRow(
                        design_delta=design_delta, eval_delta=eval_delta, compliance=value
                    )
                )
        self._check_diagonal(rows)
        return rows

    def _evaluation_model(self, problem: NonlocalProblem) -> NonlocalStateModel:
        load = assemble_load(problem.mesh, source_for(self.config, problem.spec))
        return nonlocal_state_model(
            problem.pairs,
            problem.table,
            load,
            cg_tol=self.config.cg_tol,
            cg_max_iter=self.config.cg_max_iter,
        )

    @staticmethod
    def _check_diagonal(rows: list[CrossCheckRow]) -> None:
        for eval_delta, best in best_designs(rows).items():
            if best.design_delta != eval_delta:
                logger.warning(
                    f"Under delta={eval_delta} the best design is the one optimized for "
                    f"delta={best.design_delta}, not its own"
                )

    # Entry point

    def collect(self, kind: ExperimentKind) -> ResultRows:
        """Run ``kind`` and save its main table through the processor."""
        match kind:
            case "grid-info":
                return self.processor.process_table(
                    kind, "grid_info", GRID_INFO_COLUMNS, self.run_grid_info
                )
            case "quad-convergence":
                return self.processor.process_table(
                    kind, "quad_convergence", QUAD_CONVERGENCE_COLUMNS, self.run_quad_convergence
                )
            case "mms-convergence":
                return self.processor.process_table(
                    kind, "mms_convergence", MMS_CONVERGENCE_COLUMNS, self.run_h_convergence
                )
            case "delta-convergence":
                return self.processor.process_table(
                    kind, "delta_convergence", DELTA_CONVERGENCE_COLUMNS, self.run_delta_convergence
                )
            case "optimize":
                return self.processor.process_table(
                    kind, "summary", SUMMARY_COLUMNS, self.run_optimize
                )
            case "local-optimize":
                return self.processor.process_table(
                    kind, "summary", SUMMARY_COLUMNS, self.run_local_optimize
                )
            case "cross-check":
                return self.processor.process_table(
                    kind, "cross_check", CROSS_CHECK_COLUMNS, self.run_cross_check
                )
