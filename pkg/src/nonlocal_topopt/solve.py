"""State solves: Jacobi-preconditioned CG, the local P1 reference problem and error norms."""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass
from typing import Literal

import numpy as np
from mashumaro import DataClassDictMixin
from scipy import sparse
from scipy.sparse import linalg as sparse_linalg

from src.nonlocal_topopt.exceptions import InvalidArgumentError, SolverConvergenceError
from src.nonlocal_topopt.grid import TriangleMesh
from src.nonlocal_topopt.quadrature import triangle_rule
from src.nonlocal_topopt.types import FloatArray, IntArray

logger = logging.getLogger(__name__)

# CG restarts from its own iterate when the recurrence residual drifted past tol
MAX_RESTARTS = 2


@dataclass(frozen=True, eq=False)
class StateField:
    """Nodal values on the whole mesh, zero on constrained nodes."""

    values: FloatArray
    free_nodes: IntArray

    @classmethod
    def from_free(cls, u_free: FloatArray, free_nodes: IntArray, n_nodes: int) -> StateField:
        """Scatter a solution over the free nodes into a full nodal vector."""
        values = np.zeros(n_nodes)
        values[free_nodes] = u_free
        return cls(values=values, free_nodes=free_nodes)

    @property
    def free_values(self) -> FloatArray:
        """Values on the free nodes."""
        return self.values[self.free_nodes]


@dataclass(frozen=True)
class SolveReport(DataClassDictMixin):
    """Outcome of one CG solve."""

    iterations: int
    residual: float
    wall_time: float

    def log_line(self) -> str:
        """One-line form written to the run log."""
        return (
            f"SolveReport iterations={self.iterations} residual={self.residual:.3e} "
            f"wall_time={self.wall_time:.3f}s"
        )


def _relative_residual(K: sparse.spmatrix, u: FloatArray, b: FloatArray, b_norm: float) -> float:
    return float(np.linalg.norm(b - K @ u)) / b_norm


def pcg_solve(
    K: sparse.spmatrix,
    b: FloatArray,
    *,
    tol: float = 1e-10,
    max_iter: int | None = None,
    free_nodes: IntArray | None = None,
    n_nodes: int | None = None,
) -> tuple[StateField, SolveReport]:
    """Solve K u = b by CG with a Jacobi preconditioner to ‖b - K u‖ / ‖b‖ <= tol.

    ``free_nodes`` and ``n_nodes`` place the solution into the full nodal vector; without
    them every unknown counts as free.
    """
    size = b.shape[0]
    if K.shape != (size, size):
        msg = f"matrix shape {K.shape} does not match right-hand side of length {size}"
        raise InvalidArgumentError(msg)
    if tol <= 0.0:
        msg = f"tolerance must be positive, got {tol}"
        raise InvalidArgumentError(msg)
    if free_nodes is None:
        free_nodes = np.arange(size, dtype=np.int64)
        n_nodes = size
    assert n_nodes is not None
    max_iter = max_iter if max_iter is not None else max(10 * size, 100)

    started = time.perf_counter()
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        report = SolveReport(iterations=0, residual=0.0, wall_time=time.perf_counter() - started)
        logger.info(report.log_line())
        return StateField.from_free(np.zeros(size), free_nodes, n_nodes), report

    diagonal = K.diagonal()
    if np.any(diagonal <= 0.0):
        msg = "matrix has non-positive diagonal entries"
        raise InvalidArgumentError(msg)
    preconditioner = sparse.diags(1.0 / diagonal)

    iterations = 0

    def count(_xk: FloatArray) -> None:
        nonlocal iterations
        iterations += 1

    u = np.zeros(size)
    residual = 1.0
    for _attempt in range(MAX_RESTARTS + 1):
        u, info = sparse_linalg.cg(
            K,
            b,
            x0=u,
            rtol=tol,
            atol=0.0,
            maxiter=max(1, max_iter - iterations),
            M=preconditioner,
            callback=count,
        )
        residual = _relative_residual(K, u, b, b_norm)
        if residual <= tol:
            break
        if info > 0 or iterations >= max_iter:
            msg = f"CG did not reach tol={tol:.1e} in {iterations} iterations (res={residual:.3e})"
            raise SolverConvergenceError(msg, best_iterate=u, residual=residual)
    else:
        msg = f"CG residual {residual:.3e} stays above tol={tol:.1e} after restarts"
        raise SolverConvergenceError(msg, best_iterate=u, residual=residual)

    report = SolveReport(
        iterations=iterations, residual=residual, wall_time=time.perf_counter() - started
    )
    logger.info(report.log_line())
    return StateField.from_free(u, free_nodes, n_nodes), report


def compliance(u: StateField, b: FloatArray) -> float:
    """c = b · u with b given on the free nodes."""
    return float(b @ u.free_values)


def energy(K: sparse.spmatrix, u: StateField) -> float:
    """uᵀ K u over the free nodes."""
    free = u.free_values
    return float(free @ (K @ free))


def element_gradients(mesh: TriangleMesh) -> FloatArray:
    """Gradients of the three P1 hats on every triangle, shape (M, 3, 2)."""
    p = mesh.nodes[mesh.triangles]
    x = p[:, :, 0]
    y = p[:, :, 1]
    twice_area = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0])
    twice_area -= (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    grad_x = np.stack((y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]), axis=1)
    grad_y = np.stack((x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]), axis=1)
    return np.stack((grad_x, grad_y), axis=2) / twice_area[:, None, None]


def assemble_local_stiffness(mesh: TriangleMesh, conductivity: FloatArray) -> sparse.csr_matrix:
    """P1 stiffness of -div(κ ∇u) on the interior triangles, restricted to free nodes."""
    if conductivity.shape != (mesh.n_triangles,):
        msg = f"expected {mesh.n_triangles} conductivities, got shape {conductivity.shape}"
        raise InvalidArgumentError(msg)
    if np.any(conductivity[mesh.interior_mask] <= 0.0):
        msg = "conductivity must be positive on Ω"
        raise InvalidArgumentError(msg)
    interior = np.flatnonzero(mesh.interior_mask)
    grads = element_gradients(mesh)[interior]
    local = np.einsum("eak,ebk->eab", grads, grads)
    local *= (conductivity[interior] * mesh.areas[interior])[:, None, None]
    tri = mesh.triangles[interior]
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    full = sparse.csr_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    free = mesh.free_nodes
    return full[free][:, free].tocsr()


def local_solve(
    mesh: TriangleMesh,
    conductivity: FloatArray,
    load: FloatArray,
    *,
    tol: float = 1e-10,
    max_iter: int | None = None,
) -> tuple[StateField, SolveReport]:
    """Solve the local P1 problem for a load vector given on the free nodes."""
    K = assemble_local_stiffness(mesh, conductivity)
    return pcg_solve(
        K, load, tol=tol, max_iter=max_iter, free_nodes=mesh.free_nodes, n_nodes=mesh.n_nodes
    )


def local_gradient(mesh: TriangleMesh, rho: FloatArray, p: float, u: StateField) -> FloatArray:
    """∂c/∂ρ_e = -p ρ_e^{p-1} |T_e| |∇u_e|² for the local model, zero on the collar."""
    grads = element_gradients(mesh)
    grad_u = np.einsum("eak,ea->ek", grads, u.values[mesh.triangles])
    element_energy = mesh.areas * (grad_u**2).sum(axis=1)
    return np.where(mesh.interior_mask, -p * rho ** (p - 1.0) * element_energy, 0.0)


def l2_error(
    mesh: TriangleMesh,
    u: StateField,
    exact: Callable[[FloatArray, FloatArray], FloatArray],
    *,
    region: Literal["interior", "all"] = "all",
    relative: bool = False,
) -> float:
    """‖u_h - u_exact‖_{L²} with the 7-point rule.

    ``region="all"`` integrates over Ω_δ, so ``exact`` must already be zero-extended.
    """
    bary, weights = triangle_rule(7)
    mask = mesh.interior_mask if region == "interior" else np.ones(mesh.n_triangles, dtype=bool)
    tri = mesh.triangles[mask]
    corners = mesh.nodes[tri]
    hats = np.column_stack((1.0 - bary[:, 0] - bary[:, 1], bary[:, 0], bary[:, 1]))
    points = np.einsum("qa,eak->eqk", hats, corners)
    u_h = u.values[tri] @ hats.T
    u_ex = np.asarray(exact(points[..., 0], points[..., 1]), dtype=np.float64)
    scale = 2.0 * mesh.areas[mask][:, None] * weights[None, :]
    error = float(np.sqrt(np.sum(scale * (u_h - u_ex) ** 2)))
    if not relative:
        return error
    norm = float(np.sqrt(np.sum(scale * u_ex**2)))
    if norm == 0.0:
        msg = "relative error requested for an identically zero reference"
        raise InvalidArgumentError(msg)
    return error / norm
