"""Structured triangulation of Ω_δ and enumeration of interacting triangle pairs.

The mesh is a uniform lattice of square cells of side h = 1/n_side covering
[-L, 1 + L]², L = H/n_side with H = ceil(δ·n_side) halo layers. Each cell is split along
its lower-left to upper-right diagonal into two triangles:

    τ = 0: (LL, LR, UR)
    τ = 1: (LL, UR, UL)

Node (i, j) has index j·(n_cells + 1) + i, triangle τ of cell (i, j) has index
2·(j·n_cells + i) + τ.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Final

import numpy as np

from src.nonlocal_topopt.exceptions import InvalidArgumentError
from src.nonlocal_topopt.types import FloatArray, IntArray

logger = logging.getLogger(__name__)

ELEMENT_INTERIOR: Final = 0
ELEMENT_COLLAR: Final = 1
NODE_FREE: Final = 0
NODE_CONSTRAINED: Final = 1

# Absorbs round-off in δ·n_side so that e.g. 0.2·40 gives 8 halo layers, not 9
HALO_ROUNDING_SLACK: Final = 1e-9

# Lattice offsets of the three vertices of each sub-triangle relative to the cell's LL node
SUB_TRIANGLE_OFFSETS: Final = (
    ((0, 0), (1, 0), (1, 1)),
    ((0, 0), (1, 1), (0, 1)),
)


@dataclass(frozen=True, eq=False)
class Triangle:
    """A single mesh triangle: global node ids and vertex coordinates (3 x 2)."""

    nodes: tuple[int, int, int]
    vertices: FloatArray

    @property
    def area(self) -> float:
        """Unsigned area."""
        e1 = self.vertices[1] - self.vertices[0]
        e2 = self.vertices[2] - self.vertices[0]
        return 0.5 * abs(float(e1[0] * e2[1] - e1[1] * e2[0]))


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Structured diagonal triangulation of Ω_δ.

    ``element_region`` tags each triangle interior (0) or collar (1); ``node_region`` tags
    each node free (0) or constrained (1). A node is free iff it lies strictly inside Ω.
    """

    n_side: int
    halo_layers: int
    nodes: FloatArray
    triangles: IntArray
    element_region: np.ndarray
    node_region: np.ndarray

    @property
    def n_cells(self) -> int:
        """Cells per side of the whole Ω_δ lattice."""
        return self.n_side + 2 * self.halo_layers

    @property
    def nodes_per_side(self) -> int:
        """Lattice nodes per side."""
        return self.n_cells + 1

    @property
    def h_side(self) -> float:
        """Cell side length."""
        return 1.0 / self.n_side

    @property
    def h(self) -> float:
        """Triangle diameter, the mesh size reported in convergence tables."""
        return math.sqrt(2.0) * self.h_side

    @property
    def collar_width(self) -> float:
        """L = halo_layers · h_side."""
        return self.halo_layers / self.n_side

    @property
    def n_nodes(self) -> int:
        """Number of mesh nodes."""
        return int(self.nodes.shape[0])

    @property
    def n_triangles(self) -> int:
        """Number of mesh triangles."""
        return int(self.triangles.shape[0])

    @cached_property
    def areas(self) -> FloatArray:
        """Element areas."""
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def centroids(self) -> FloatArray:
        """Element centroids."""
        return self.nodes[self.triangles].mean(axis=1)

    @cached_property
    def interior_mask(self) -> np.ndarray:
        """Boolean mask of triangles inside Ω."""
        return self.element_region == ELEMENT_INTERIOR

    @cached_property
    def free_nodes(self) -> IntArray:
        """Indices of free (unconstrained) nodes in ascending order."""
        return np.flatnonzero(self.node_region == NODE_FREE).astype(np.int64)

    @cached_property
    def free_index(self) -> IntArray:
        """Map from node index to free-DOF index, -1 for constrained nodes."""
        index = np.full(self.n_nodes, -1, dtype=np.int64)
        index[self.free_nodes] = np.arange(self.free_nodes.size, dtype=np.int64)
        return index

    @property
    def n_free(self) -> int:
        """Number of free nodes."""
        return int(self.free_nodes.size)

    @property
    def n_interior(self) -> int:
        """Number of interior triangles."""
        return int(np.count_nonzero(self.interior_mask))

    @property
    def interior_area(self) -> float:
        """|Ω| as covered by the interior triangles."""
        return float(self.areas[self.interior_mask].sum())

    def triangle(self, index: int) -> Triangle:
        """Return triangle ``index`` with its vertex coordinates."""
        ids = self.triangles[index]
        return Triangle(
            nodes=(int(ids[0]), int(ids[1]), int(ids[2])),
            vertices=self.nodes[ids].copy(),
        )

    def triangle_index(self, i: int, j: int, tau: int) -> int:
        """Index of sub-triangle ``tau`` of cell (i, j)."""
        return 2 * (j * self.n_cells + i) + tau

    def cell_of(self, index: IntArray) -> tuple[IntArray, IntArray, IntArray]:
        """Cell coordinates (i, j) and sub-triangle id τ of triangle indices."""
        cell = index // 2
        return cell % self.n_cells, cell // self.n_cells, index % 2

    def anchor_node(self, index: IntArray) -> IntArray:
        """Index of the lower-left node of the cell holding each triangle."""
        i, j, _ = self.cell_of(index)
        return j * self.nodes_per_side + i

    def locate(self, points: FloatArray) -> IntArray:
        """Triangle containing each point, -1 for points outside the mesh.

        Points on shared edges resolve to the triangle of the cell whose lower-left corner
        is closest from below.
        """
        lattice = (points + self.collar_width) * self.n_side
        inside = np.all((lattice >= 0.0) & (lattice <= self.n_cells), axis=1)
        # the top and right mesh boundaries belong to the last cell layer
        i = np.minimum(np.floor(lattice[:, 0]).astype(np.int64), self.n_cells - 1)
        j = np.minimum(np.floor(lattice[:, 1]).astype(np.int64), self.n_cells - 1)
        # above the diagonal belongs to τ = 1
        tau = ((lattice[:, 1] - j) > (lattice[:, 0] - i)).astype(np.int64)
        index = 2 * (j * self.n_cells + i) + tau
        return np.where(inside, index, -1)


def build_grid(n_side: int, delta: float) -> TriangleMesh:
    """Triangulate Ω_δ with a collar of ceil(δ · n_side) cell layers."""
    if isinstance(n_side, bool) or not isinstance(n_side, int | np.integer) or n_side < 1:
        msg = f"n_side must be a positive integer, got {n_side!r}"
        raise InvalidArgumentError(msg)
    if not math.isfinite(delta) or delta < 0.0:
        msg = f"delta must be finite and non-negative, got {delta!r}"
        raise InvalidArgumentError(msg)

    n_side = int(n_side)
    halo = math.ceil(delta * n_side - HALO_ROUNDING_SLACK) if delta > 0.0 else 0
    n_cells = n_side + 2 * halo
    per_side = n_cells + 1

    lattice = np.arange(per_side, dtype=np.int64)
    ii, jj = np.meshgrid(lattice, lattice, indexing="xy")
    ii = ii.ravel()
    jj = jj.ravel()
    nodes = np.column_stack(((ii - halo) / n_side, (jj - halo) / n_side)).astype(np.float64)

    constrained = (ii <= halo) | (ii >= halo + n_side) | (jj <= halo) | (jj >= halo + n_side)
    node_region = np.where(constrained, NODE_CONSTRAINED, NODE_FREE).astype(np.int8)

    cells = np.arange(n_cells, dtype=np.int64)
    ci, cj = np.meshgrid(cells, cells, indexing="xy")
    ci = ci.ravel()
    cj = cj.ravel()
    ll = cj * per_side + ci
    lr = ll + 1
    ul = ll + per_side
    ur = ul + 1
    triangles = np.empty((2 * ci.size, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack((ll, lr, ur))
    triangles[1::2] = np.column_stack((ll, ur, ul))

    interior_cell = (ci >= halo) & (ci < halo + n_side) & (cj >= halo) & (cj < halo + n_side)
    element_region = np.repeat(np.where(interior_cell, ELEMENT_INTERIOR, ELEMENT_COLLAR), 2)

    mesh = TriangleMesh(
        n_side=n_side,
        halo_layers=halo,
        nodes=nodes,
        triangles=triangles,
        element_region=element_region.astype(np.int8),
        node_region=node_region,
    )
    logger.debug(
        f"Built grid n_side={n_side} delta={delta}: {mesh.n_nodes} nodes, "
        f"{mesh.n_triangles} triangles, {mesh.n_free} free"
    )
    return mesh


def _point_segment_distance(p: FloatArray, a: FloatArray, b: FloatArray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return float(np.hypot(*(p - (a + t * ab))))


def _segments_cross(a: FloatArray, b: FloatArray, c: FloatArray, d: FloatArray) -> bool:
    def orient(p: FloatArray, q: FloatArray, r: FloatArray) -> float:
        return float((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))

    d1 = orient(c, d, a)
    d2 = orient(c, d, b)
    d3 = orient(a, b, c)
    d4 = orient(a, b, d)
    return d1 * d2 < 0.0 and d3 * d4 < 0.0


def triangle_distance(first: FloatArray, second: FloatArray) -> float:
    """Euclidean distance between two closed triangles given as 3 x 2 vertex arrays.

    The minimum over vertex-to-edge distances in both directions; zero when edges cross.
    """
    edges = ((0, 1), (1, 2), (2, 0))
    for a, b in edges:
        for c, d in edges:
            if _segments_cross(first[a], first[b], second[c], second[d]):
                return 0.0
    best = math.inf
    for points, other in ((first, second), (second, first)):
        for p in points:
            for a, b in edges:
                best = min(best, _point_segment_distance(p, other[a], other[b]))
    return best


@dataclass(frozen=True, order=True)
class PairKey:
    """Translation class of a triangle pair: cell offset (di, dj) and sub-triangle ids."""

    di: int
    dj: int
    tau1: int
    tau2: int

    def is_canonical(self) -> bool:
        """Whether a pair with this key has t1 <= t2."""
        if self.dj != 0:
            return self.dj > 0
        if self.di != 0:
            return self.di > 0
        return self.tau2 >= self.tau1

    def lattice_vertices(self) -> tuple[tuple[tuple[int, int], ...], tuple[tuple[int, int], ...]]:
        """Integer vertex coordinates of both triangles with the first cell at the origin."""
        first = SUB_TRIANGLE_OFFSETS[self.tau1]
        second = tuple((x + self.di, y + self.dj) for x, y in SUB_TRIANGLE_OFFSETS[self.tau2])
        return first, second

    @property
    def k(self) -> int:
        """Number of shared vertices minus one."""
        first, second = self.lattice_vertices()
        return len(set(first) & set(second)) - 1

    def distance(self, h_side: float) -> float:
        """Distance between the two triangles on a lattice of cell side h_side."""
        first, second = self.lattice_vertices()
        return h_side * triangle_distance(
            np.asarray(first, dtype=np.float64), np.asarray(second, dtype=np.float64)
        )

    def centre_distance(self, h_side: float) -> float:
        """Distance between the centres of the two cells."""
        return h_side * math.hypot(self.di, self.dj)


def candidate_keys(n_cells: int, h_side: float, reach: float) -> list[PairKey]:
    """Canonical keys whose cell centres are closer than ``reach`` + h·√2."""
    radius = min(n_cells - 1, math.ceil(reach / h_side) + 2)
    keys = []
    for dj in range(radius + 1):
        for di in range(-radius, radius + 1):
            if math.hypot(di, dj) * h_side >= reach + math.sqrt(2.0) * h_side:
                continue
            for tau1 in (0, 1):
                for tau2 in (0, 1):
                    key = PairKey(di, dj, tau1, tau2)
                    if key.is_canonical():
                        keys.append(key)
    return keys


def pair_classes(mesh: TriangleMesh, delta: float) -> list[PairKey]:
    """All canonical pair classes of ``mesh`` with triangle distance below 2δ."""
    if delta <= 0.0:
        return []
    return [
        key
        for key in candidate_keys(mesh.n_cells, mesh.h_side, 2.0 * delta)
        if key.distance(mesh.h_side) < 2.0 * delta
    ]


@dataclass(frozen=True, eq=False)
class PairList:
    """All unordered triangle pairs (t1 <= t2) of a mesh closer than 2δ.

    Pairs are stored grouped by class: the pairs of ``classes[c]`` occupy
    ``class_ptr[c]:class_ptr[c + 1]``.
    """

    mesh: TriangleMesh
    delta: float
    classes: tuple[PairKey, ...]
    class_ptr: IntArray
    t1: IntArray
    t2: IntArray
    class_index: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        """Number of pairs."""
        return int(self.t1.size)

    @cached_property
    def class_k(self) -> np.ndarray:
        """Shared-vertex classification k of each class."""
        return np.array([key.k for key in self.classes], dtype=np.int8)

    @property
    def k(self) -> np.ndarray:
        """Shared-vertex classification k of each pair."""
        return self.class_k[self.class_index]

    def class_slice(self, c: int) -> slice:
        """Slice of the pairs belonging to class ``c``."""
        return slice(int(self.class_ptr[c]), int(self.class_ptr[c + 1]))

    def as_tuples(self) -> list[tuple[int, int, int, PairKey]]:
        """Pairs as (t1, t2, k, key) tuples, for inspection on small meshes."""
        return [
            (int(a), int(b), int(self.class_k[c]), self.classes[c])
            for a, b, c in zip(self.t1, self.t2, self.class_index, strict=True)
        ]


def _class_members(mesh: TriangleMesh, key: PairKey) -> tuple[IntArray, IntArray]:
    n_cells = mesh.n_cells
    i = np.arange(max(0, -key.di), min(n_cells, n_cells - key.di), dtype=np.int64)
    j = np.arange(0, n_cells - key.dj, dtype=np.int64)
    ci, cj = np.meshgrid(i, j, indexing="xy")
    ci = ci.ravel()
    cj = cj.ravel()
    t1 = 2 * (cj * n_cells + ci) + key.tau1
    t2 = 2 * ((cj + key.dj) * n_cells + ci + key.di) + key.tau2
    return t1, t2


def enumerate_pairs(mesh: TriangleMesh, delta: float, *, drop_inactive: bool = True) -> PairList:
    """List every triangle pair with distance below 2δ.

    With ``drop_inactive`` pairs of two collar triangles whose six nodes are all
    constrained are left out; they touch no free degree of freedom.
    """
    if not math.isfinite(delta) or delta < 0.0:
        msg = f"delta must be finite and non-negative, got {delta!r}"
        raise InvalidArgumentError(msg)

    collar_locked = (mesh.element_region == ELEMENT_COLLAR) & np.all(
        mesh.node_region[mesh.triangles] == NODE_CONSTRAINED, axis=1
    )

    kept: list[PairKey] = []
    ptr = [0]
    t1_parts: list[IntArray] = []
    t2_parts: list[IntArray] = []
    for key in pair_classes(mesh, delta):
        t1, t2 = _class_members(mesh, key)
        if drop_inactive:
            active = ~(collar_locked[t1] & collar_locked[t2])
            t1 = t1[active]
            t2 = t2[active]
        if t1.size == 0:
            continue
        kept.append(key)
        t1_parts.append(t1)
        t2_parts.append(t2)
        ptr.append(ptr[-1] + t1.size)

    class_index = np.repeat(np.arange(len(kept), dtype=np.int32), np.diff(ptr))
    pairs = PairList(
        mesh=mesh,
        delta=delta,
        classes=tuple(kept),
        class_ptr=np.asarray(ptr, dtype=np.int64),
        t1=np.concatenate(t1_parts) if t1_parts else np.empty(0, dtype=np.int64),
        t2=np.concatenate(t2_parts) if t2_parts else np.empty(0, dtype=np.int64),
        class_index=class_index,
    )
    logger.info(f"Enumerated {len(pairs)} pairs in {len(kept)} classes (delta={delta})")
    return pairs
