"""Element-pair integrals of the nonlocal bilinear form.

For two triangles T1, T2 with union node set N the block is

    B[α, β] = ∫_{T1} ∫_{T2} A(|x - x'|) / |x - x'|² · D_α D_β dx' dx,
    D_α = φ_α(x) - φ_α(x'),

with local P1 hats φ restricted to their own element. Each pair class gets its own
reduction so that the weak singularity at x = x' turns into an endpoint weight
t^γ handled exactly by Gauss–Jacobi:

* identical (k = 2): relative coordinates over the hexagon S - S, γ = 1 - e
* edge (k = 1): relative coordinates over six tetrahedra, γ = 2 - e
* vertex (k = 0): polar-type split into two 4D pyramids, γ = 3 - e
* disjoint (k = -1): tensor Duffy rules on both triangles

where e = n + 2s - 2 is the kernel exponent.
"""

from __future__ import annotations

import functools
import itertools
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import TYPE_CHECKING, Final, Literal

import numpy as np
from mashumaro import DataClassDictMixin
from scipy import special

from src.nonlocal_topopt.exceptions import InvalidArgumentError
from src.nonlocal_topopt.grid import Triangle, TriangleMesh, candidate_keys, triangle_distance
from src.nonlocal_topopt.types import FloatArray, PairClassLabel

if TYPE_CHECKING:
    from src.nonlocal_topopt.kernel import KernelSpec

logger = logging.getLogger(__name__)

# Hexagon S - S split into triangles (0, P, Q), each with det[P, Q] = 1
HEXAGON_SECTORS: Final = (
    ((1.0, 0.0), (0.0, 1.0)),
    ((0.0, 1.0), (-1.0, 1.0)),
    ((-1.0, 1.0), (-1.0, 0.0)),
    ((-1.0, 0.0), (0.0, -1.0)),
    ((0.0, -1.0), (1.0, -1.0)),
    ((1.0, -1.0), (1.0, 0.0)),
)

# Edge-pair domain in (z, p, q) as cones over base triangles (P, Q, R) at gauge 1
EDGE_TETRAHEDRA: Final = (
    ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 1.0, 1.0)),
    ((1.0, 0.0, 0.0), (0.0, 1.0, 1.0), (1.0, 0.0, 1.0)),
    ((0.0, 0.0, 1.0), (1.0, 0.0, 1.0), (0.0, 1.0, 1.0)),
    ((0.0, 1.0, 0.0), (-1.0, 1.0, 0.0), (0.0, 1.0, 1.0)),
    ((-1.0, 0.0, 0.0), (0.0, 0.0, 1.0), (0.0, 1.0, 1.0)),
    ((-1.0, 0.0, 0.0), (0.0, 1.0, 1.0), (-1.0, 1.0, 0.0)),
)

# Dunavant degree-5 rule; barycentric orbits and weights normalised to sum 1
_DUNAVANT7_ORBITS: Final = (
    ((1 / 3, 1 / 3, 1 / 3), 0.225),
    ((0.059715871789770, 0.470142064105115, 0.470142064105115), 0.132394152788506),
    ((0.797426985353087, 0.101286507323456, 0.101286507323456), 0.125939180544827),
)


@dataclass(frozen=True)
class QuadratureBudget(DataClassDictMixin):
    """Gauss points per integration dimension for each pair class."""

    identical: int = 15
    edge: int = 12
    vertex: int = 10
    disjoint_near: int = 8
    disjoint_straddling: int = 12

    def __post_init__(self) -> None:
        """Reject budgets below one point."""
        for name, value in self.to_dict().items():
            if not isinstance(value, int) or value < 1:
                msg = f"quadrature budget {name} must be a positive integer, got {value!r}"
                raise InvalidArgumentError(msg)

    @classmethod
    def uniform(cls, points: int) -> QuadratureBudget:
        """Same number of points for every class."""
        return cls(points, points, points, points, points)

    def points_for(self, label: PairClassLabel) -> int:
        """Points per dimension used for ``label``."""
        return int(getattr(self, label.replace("-", "_")))


@dataclass(frozen=True, eq=False)
class PairBlock:
    """Local matrix of one element pair over its union node set."""

    k: int
    node_ids: tuple[int, ...]
    entries: FloatArray


def _readonly(*arrays: FloatArray) -> tuple[FloatArray, ...]:
    for array in arrays:
        array.setflags(write=False)
    return arrays


@functools.cache
def gauss_legendre_unit(n: int) -> tuple[FloatArray, FloatArray]:
    """Gauss–Legendre nodes and weights on [0, 1]."""
    x, w = special.roots_legendre(n)
    nodes, weights = _readonly(0.5 * (x + 1.0), 0.5 * w)
    return nodes, weights


@functools.cache
def gauss_jacobi_unit(n: int, gamma: float) -> tuple[FloatArray, FloatArray]:
    """Nodes and weights for ∫_0^1 t^gamma f(t) dt."""
    x, w = special.roots_jacobi(n, 0.0, gamma)
    nodes, weights = _readonly(0.5 * (x + 1.0), w * 2.0 ** (-gamma - 1.0))
    return nodes, weights


@functools.cache
def duffy_triangle_rule(n: int) -> tuple[FloatArray, FloatArray]:
    """Collapsed tensor Gauss rule on the reference triangle S; weights sum to 1/2."""
    x, w = gauss_legendre_unit(n)
    xi, eta = np.meshgrid(x, x, indexing="ij")
    wxi, weta = np.meshgrid(w, w, indexing="ij")
    points = np.column_stack(((xi * (1.0 - eta)).ravel(), (xi * eta).ravel()))
    points, weights = _readonly(points, (wxi * weta * xi).ravel())
    return points, weights


@functools.cache
def triangle_rule(n_points: Literal[3, 7]) -> tuple[FloatArray, FloatArray]:
    """Symmetric rule on S: 3 points (degree 2) or 7 points (degree 5); weights sum to 1/2."""
    if n_points == 3:
        bary = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
        weights = np.full(3, 1 / 6)
    elif n_points == 7:
        rows = []
        ws = []
        for orbit, weight in _DUNAVANT7_ORBITS:
            for perm in sorted(set(itertools.permutations(orbit))):
                rows.append(perm)
                ws.append(0.5 * weight)
        bary = np.asarray(rows)
        weights = np.asarray(ws)
    else:
        msg = f"triangle rule with {n_points} points is not available"
        raise InvalidArgumentError(msg)
    points, weights = _readonly(np.ascontiguousarray(bary[:, 1:]), weights)
    return points, weights


def classify_pair(first: Triangle, second: Triangle) -> int:
    """Shared-vertex count minus one: 2 identical, 1 edge, 0 vertex, -1 disjoint."""
    return len(set(first.nodes) & set(second.nodes)) - 1


def pair_diameter(first: Triangle, second: Triangle) -> float:
    """Largest distance between any two of the six vertices."""
    points = np.vstack((first.vertices, second.vertices))
    diff = points[:, None, :] - points[None, :, :]
    return float(np.sqrt((diff**2).sum(axis=-1)).max())


def pair_label(first: Triangle, second: Triangle, delta: float) -> PairClassLabel:
    """Quadrature class of a pair inside the interaction range."""
    k = classify_pair(first, second)
    if k == 2:
        return "identical"
    if k == 1:
        return "edge"
    if k == 0:
        return "vertex"
    return "disjoint-near" if pair_diameter(first, second) < delta else "disjoint-straddling"


def _edge_matrix(vertices: FloatArray) -> tuple[FloatArray, float]:
    jac = np.column_stack((vertices[1] - vertices[0], vertices[2] - vertices[0]))
    return jac, abs(float(np.linalg.det(jac)))


def _contract(d_hat: FloatArray, q: FloatArray) -> FloatArray:
    m = d_hat.shape[0]
    flat = d_hat.reshape(m, -1)
    return (flat * q.reshape(-1)) @ flat.T


def _identical_block(tri: Triangle, spec: KernelSpec, n: int) -> FloatArray:
    jac, det = _edge_matrix(tri.vertices)
    t, wt = gauss_jacobi_unit(n, 1.0 - spec.exponent)
    sigma, ws = gauss_legendre_unit(n)
    block = np.zeros((3, 3))
    for p, q in HEXAGON_SECTORS:
        z = np.asarray(p) + sigma[:, None] * (np.asarray(q) - np.asarray(p))
        rho = np.hypot(*(jac @ z.T))
        d_hat = np.stack((-(z[:, 0] + z[:, 1]), z[:, 0], z[:, 1]))
        weight = (
            wt[:, None]
            * ws[None, :]
            * 0.5
            * (1.0 - t[:, None]) ** 2
            * spec.c_nrm
            * rho[None, :] ** (-spec.exponent - 2.0)
            * spec.radial_factor(t[:, None] * rho[None, :])
        )
        d_full = np.broadcast_to(d_hat[:, None, :], (3, t.size, sigma.size))
        block += _contract(d_full, weight)
    return det * det * block


def _edge_block(
    first: Triangle, second: Triangle, spec: KernelSpec, n: int
) -> tuple[list[int], FloatArray]:
    v_id, w_id = sorted(set(first.nodes) & set(second.nodes))
    a_id = next(node for node in first.nodes if node not in (v_id, w_id))
    b_id = next(node for node in second.nodes if node not in (v_id, w_id))
    coords = dict(zip(first.nodes, first.vertices, strict=True))
    coords.update(zip(second.nodes, second.vertices, strict=True))
    a1 = coords[w_id] - coords[v_id]
    a2 = coords[a_id] - coords[v_id]
    b2 = coords[b_id] - coords[v_id]
    jac = abs(float(a1[0] * a2[1] - a1[1] * a2[0])) * abs(float(a1[0] * b2[1] - a1[1] * b2[0]))

    t, wt = gauss_jacobi_unit(n, 2.0 - spec.exponent)
    sig, wsig = duffy_triangle_rule(n)
    block = np.zeros((4, 4))
    for p, q, r in EDGE_TETRAHEDRA:
        p_, q_, r_ = np.asarray(p), np.asarray(q), np.asarray(r)
        det = abs(float(np.linalg.det(np.stack((p_, q_, r_)))))
        y = p_ + sig[:, :1] * (q_ - p_) + sig[:, 1:] * (r_ - p_)
        z, pp, qq = y[:, 0], y[:, 1], y[:, 2]
        diff = np.outer(a1, z) + np.outer(a2, pp) - np.outer(b2, qq)
        rho = np.hypot(*diff)
        d_hat = np.stack((-z - pp + qq, z, pp, -qq))
        weight = (
            wt[:, None]
            * wsig[None, :]
            * det
            * (1.0 - t[:, None])
            * spec.c_nrm
            * rho[None, :] ** (-spec.exponent - 2.0)
            * spec.radial_factor(t[:, None] * rho[None, :])
        )
        d_full = np.broadcast_to(d_hat[:, None, :], (4, t.size, z.size))
        block += _contract(d_full, weight)
    return [v_id, w_id, a_id, b_id], jac * block


def _vertex_block(
    first: Triangle, second: Triangle, spec: KernelSpec, n: int
) -> tuple[list[int], FloatArray]:
    (v_id,) = set(first.nodes) & set(second.nodes)
    i = first.nodes.index(v_id)
    j = second.nodes.index(v_id)
    first_ids = [first.nodes[(i + 1) % 3], first.nodes[(i + 2) % 3]]
    second_ids = [second.nodes[(j + 1) % 3], second.nodes[(j + 2) % 3]]
    a_mat, det_a = _edge_matrix(first.vertices[[i, (i + 1) % 3, (i + 2) % 3]])
    b_mat, det_b = _edge_matrix(second.vertices[[j, (j + 1) % 3, (j + 2) % 3]])
    jac = det_a * det_b

    t, wt = gauss_jacobi_unit(n, 3.0 - spec.exponent)
    tau, wtau = gauss_legendre_unit(n)
    hat, what = duffy_triangle_rule(n)
    edge = np.column_stack((1.0 - tau, tau))
    # outer point runs along the gauge-1 edge, inner point fills the scaled triangle
    e_rep = np.repeat(edge, hat.shape[0], axis=0)
    h_rep = np.tile(hat, (tau.size, 1))
    w_dir = np.repeat(wtau, hat.shape[0]) * np.tile(what, tau.size)

    block = np.zeros((5, 5))
    for u_hat, w_hat in ((e_rep, h_rep), (h_rep, e_rep)):
        diff = a_mat @ u_hat.T - b_mat @ w_hat.T
        rho = np.hypot(*diff)
        d_hat = np.stack(
            (
                -(u_hat[:, 0] + u_hat[:, 1]) + (w_hat[:, 0] + w_hat[:, 1]),
                u_hat[:, 0],
                u_hat[:, 1],
                -w_hat[:, 0],
                -w_hat[:, 1],
            )
        )
        weight = (
            wt[:, None]
            * w_dir[None, :]
            * spec.c_nrm
            * rho[None, :] ** (-spec.exponent - 2.0)
            * spec.radial_factor(t[:, None] * rho[None, :])
        )
        d_full = np.broadcast_to(d_hat[:, None, :], (5, t.size, rho.size))
        block += _contract(d_full, weight)
    return [v_id, *first_ids, *second_ids], jac * block


def _disjoint_block(first: Triangle, second: Triangle, spec: KernelSpec, n: int) -> FloatArray:
    jac_a, det_a = _edge_matrix(first.vertices)
    jac_b, det_b = _edge_matrix(second.vertices)
    pts, wts = duffy_triangle_rule(n)
    x = first.vertices[0] + pts @ jac_a.T
    y = second.vertices[0] + pts @ jac_b.T
    r = np.hypot(x[:, None, 0] - y[None, :, 0], x[:, None, 1] - y[None, :, 1])
    weight = np.outer(wts, wts) * det_a * det_b * spec.over_r_squared(r)
    phi = np.stack((1.0 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]))
    q = pts.shape[0]
    d_hat = np.concatenate(
        (
            np.broadcast_to(phi[:, :, None], (3, q, q)),
            -np.broadcast_to(phi[:, None, :], (3, q, q)),
        )
    )
    return _contract(d_hat, weight)


def _canonical_order(first: Triangle, second: Triangle) -> tuple[Triangle, Triangle]:
    if tuple(sorted(second.nodes)) < tuple(sorted(first.nodes)):
        return second, first
    return first, second


def union_node_ids(first: Triangle, second: Triangle) -> tuple[int, ...]:
    """Canonical union node order of a pair, independent of argument order."""
    first, second = _canonical_order(first, second)
    return first.nodes + tuple(node for node in second.nodes if node not in first.nodes)


def integrate_pair(
    first: Triangle, second: Triangle, spec: KernelSpec, budget: QuadratureBudget
) -> PairBlock:
    """Local matrix of the pair (first, second) over the union of their nodes.

    The node order is the canonical one: nodes of the triangle with the smaller sorted
    node tuple, then the remaining nodes of the other. Swapping the arguments gives the
    identical block. Pairs at distance >= δ give an exact zero block.
    """
    first, second = _canonical_order(first, second)
    k = classify_pair(first, second)
    node_ids = union_node_ids(first, second)
    m = len(node_ids)

    distance = 0.0 if k >= 0 else triangle_distance(first.vertices, second.vertices)
    if distance >= 2.0 * spec.delta:
        msg = f"pair {first.nodes}/{second.nodes} at distance {distance:.6g} is outside 2δ"
        raise InvalidArgumentError(msg)
    if distance >= spec.delta:
        return PairBlock(k=k, node_ids=node_ids, entries=np.zeros((m, m)))

    label = pair_label(first, second, spec.delta)
    n = budget.points_for(label)
    if k == 2:
        entries = _identical_block(first, spec, n)
    elif k == -1:
        entries = _disjoint_block(first, second, spec, n)
    else:
        local_ids, local = (_edge_block if k == 1 else _vertex_block)(first, second, spec, n)
        perm = [local_ids.index(node) for node in node_ids]
        entries = local[np.ix_(perm, perm)]
    return PairBlock(k=k, node_ids=node_ids, entries=0.5 * (entries + entries.T))


def representative_pairs(
    mesh: TriangleMesh, delta: float
) -> dict[PairClassLabel, tuple[Triangle, Triangle]]:
    """One triangle pair of ``mesh`` per quadrature class, nearest offsets first."""
    i0 = j0 = mesh.n_cells // 2
    found: dict[PairClassLabel, tuple[Triangle, Triangle]] = {}
    keys = sorted(
        candidate_keys(mesh.n_cells, mesh.h_side, delta),
        key=lambda key: (key.centre_distance(mesh.h_side), key),
    )
    for key in keys:
        i1, j1 = i0 + key.di, j0 + key.dj
        if not (0 <= i1 < mesh.n_cells and 0 <= j1 < mesh.n_cells):
            continue
        first = mesh.triangle(mesh.triangle_index(i0, j0, key.tau1))
        second = mesh.triangle(mesh.triangle_index(i1, j1, key.tau2))
        if triangle_distance(first.vertices, second.vertices) >= delta:
            continue
        found.setdefault(pair_label(first, second, delta), (first, second))
    return found


@dataclass(frozen=True)
class QuadratureErrorRow(DataClassDictMixin):
    """Relative Frobenius error of one class at one budget."""

    k: str
    points_per_dim: int
    rel_error: float


LABEL_TO_K: Final[Mapping[PairClassLabel, str]] = {
    "disjoint-near": "-1near",
    "disjoint-straddling": "-1far",
    "vertex": "0",
    "edge": "1",
    "identical": "2",
}


def quadrature_convergence(
    pairs: Mapping[PairClassLabel, tuple[Triangle, Triangle]],
    spec: KernelSpec,
    levels: Sequence[int],
    reference_points: int,
) -> list[QuadratureErrorRow]:
    """Block error of every class against a reference computed with more points."""
    rows = []
    for label, (first, second) in pairs.items():
        reference = integrate_pair(first, second, spec, QuadratureBudget.uniform(reference_points))
        norm = float(np.linalg.norm(reference.entries))
        if norm == 0.0:
            logger.warning(f"Reference block for {label} vanishes, skipping")
            continue
        for n in levels:
            block = integrate_pair(first, second, spec, QuadratureBudget.uniform(n))
            error = float(np.linalg.norm(block.entries - reference.entries)) / norm
            rows.append(QuadratureErrorRow(k=LABEL_TO_K[label], points_per_dim=n, rel_error=error))
            logger.debug(f"{label}: n={n} rel_error={error:.3e}")
    return rows
