"""Design fields, the reference-pair table and assembly of the nonlocal stiffness.

On the structured grid two triangle pairs related by a lattice translation have the same
block, so every pair class is integrated once at an anchor cell. Assembly then scales
those unit-conductivity blocks by w · s(t1) · s(t2), s = ρ^{p/2}, and scatters them into a
stencil array indexed by (node offset, node) before converting to CSR on the free nodes.
"""

from __future__ import annotations

import functools
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Final

import numpy as np
from mashumaro import DataClassDictMixin
from scipy import sparse

from src.nonlocal_topopt.exceptions import (
    CacheMismatchError,
    InvalidArgumentError,
    UnsupportedMeshError,
)
from src.nonlocal_topopt.grid import PairKey, PairList, TriangleMesh, build_grid, pair_classes
from src.nonlocal_topopt.kernel import KernelSpec
from src.nonlocal_topopt.quadrature import (
    PairBlock,
    QuadratureBudget,
    integrate_pair,
    triangle_rule,
    union_node_ids,
)
from src.nonlocal_topopt.types import FloatArray, IntArray, SourceFunction

logger = logging.getLogger(__name__)

PAIR_TABLE_FORMAT_VERSION: Final = 1


@dataclass(frozen=True, eq=False)
class DesignField:
    """Element densities with their bounds, volume fraction and SIMP exponent."""

    rho: FloatArray
    areas: FloatArray
    rho_min: float = 1e-3
    rho_max: float = 1.0
    gamma: float = 0.4
    p: float = 1.0
    domain_area: float = 1.0

    def __post_init__(self) -> None:
        """Check shapes and bounds."""
        if self.rho.shape != self.areas.shape:
            msg = f"design has {self.rho.size} values for {self.areas.size} elements"
            raise InvalidArgumentError(msg)
        if not 0.0 < self.rho_min <= self.rho_max:
            msg = f"need 0 < rho_min <= rho_max, got {self.rho_min}, {self.rho_max}"
            raise InvalidArgumentError(msg)
        if not 0.0 < self.gamma <= 1.0:
            msg = f"volume fraction gamma must lie in (0, 1], got {self.gamma}"
            raise InvalidArgumentError(msg)
        if self.p < 1.0:
            msg = f"SIMP exponent p must be >= 1, got {self.p}"
            raise InvalidArgumentError(msg)
        if not np.all(np.isfinite(self.rho)):
            msg = "design contains non-finite densities"
            raise InvalidArgumentError(msg)
        if np.any(self.rho < self.rho_min) or np.any(self.rho > self.rho_max):
            msg = (
                f"design values in [{self.rho.min():.6g}, {self.rho.max():.6g}] leave "
                f"[{self.rho_min}, {self.rho_max}]"
            )
            raise InvalidArgumentError(msg)

    @classmethod
    def uniform(cls, value: float, areas: FloatArray, **kwargs: float) -> DesignField:
        """Constant design."""
        return cls(rho=np.full(areas.shape, float(value)), areas=areas, **kwargs)

    def with_rho(self, rho: FloatArray) -> DesignField:
        """Same parameters, new densities."""
        return replace(self, rho=rho)

    @property
    def scale(self) -> FloatArray:
        """s = ρ^{p/2}, the per-element factor of the nonlocal stiffness."""
        return self.rho ** (0.5 * self.p)

    @property
    def conductivity(self) -> FloatArray:
        """κ = ρ^p."""
        return self.rho**self.p

    @property
    def target_volume(self) -> float:
        """γ · |Ω|."""
        return self.gamma * self.domain_area

    def volume(self) -> float:
        """Σ ρ_e · |T_e|."""
        return float(self.rho @ self.areas)


def initial_design(mesh: TriangleMesh, gamma: float, **kwargs: float) -> DesignField:
    """Uniform design that meets the volume constraint with equality.

    The design lives on all of Ω_δ while the budget refers to |Ω| = 1, so the constant
    value is γ · |Ω| / |Ω_δ|.
    """
    domain_area = float(kwargs.pop("domain_area", mesh.interior_area))
    value = gamma * domain_area / float(mesh.areas.sum())
    rho_min = float(kwargs.get("rho_min", 1e-3))
    if value < rho_min:
        msg = f"uniform start {value:.6g} falls below rho_min={rho_min}"
        raise InvalidArgumentError(msg)
    return DesignField.uniform(value, mesh.areas, gamma=gamma, domain_area=domain_area, **kwargs)


@dataclass(frozen=True, eq=False)
class ReferencePair:
    """Block of one pair class, with node positions relative to the first cell's LL node."""

    key: PairKey
    block: PairBlock
    node_offsets: IntArray

    @property
    def is_zero(self) -> bool:
        """Whether the pair lies beyond the kernel support."""
        return not np.any(self.block.entries)


@dataclass(frozen=True)
class PairTableHeader(DataClassDictMixin):
    """Everything a cached table depends on."""

    format_version: int
    n_side: int
    halo_layers: int
    kernel: KernelSpec
    budget: QuadratureBudget

    def digest(self) -> str:
        """Short content hash used in cache file names."""
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class PairTable:
    """Reference blocks for every pair class of a structured grid."""

    header: PairTableHeader
    entries: dict[PairKey, ReferencePair] = field(repr=False)

    def __len__(self) -> int:
        """Number of classes."""
        return len(self.entries)

    def __contains__(self, key: object) -> bool:
        """Whether ``key`` has a block."""
        return key in self.entries

    @property
    def spec(self) -> KernelSpec:
        """Kernel the blocks were integrated with."""
        return self.header.kernel

    def matches(self, mesh: TriangleMesh) -> bool:
        """Whether the table was built for this grid."""
        return mesh.n_side == self.header.n_side and mesh.halo_layers == self.header.halo_layers

    def lookup(self, mesh: TriangleMesh, t1: int, t2: int) -> PairBlock:
        """Block of the pair (t1, t2) with node ids translated to its actual position."""
        if t2 < t1:
            t1, t2 = t2, t1
        i1, j1, tau1 = (int(v) for v in mesh.cell_of(np.int64(t1)))
        i2, j2, tau2 = (int(v) for v in mesh.cell_of(np.int64(t2)))
        key = PairKey(i2 - i1, j2 - j1, tau1, tau2)
        reference = self.entries.get(key)
        if reference is None:
            msg = f"pair class {key} is not in the table"
            raise InvalidArgumentError(msg)
        per_side = mesh.nodes_per_side
        node_ids = tuple(
            int((j1 + oy) * per_side + i1 + ox) for ox, oy in reference.node_offsets
        )
        return PairBlock(k=reference.block.k, node_ids=node_ids, entries=reference.block.entries)


def _check_structured(mesh: TriangleMesh) -> None:
    expected = build_grid(mesh.n_side, mesh.halo_layers / mesh.n_side)
    same = (
        expected.halo_layers == mesh.halo_layers
        and expected.nodes.shape == mesh.nodes.shape
        and expected.triangles.shape == mesh.triangles.shape
        and np.array_equal(expected.triangles, mesh.triangles)
        and np.allclose(expected.nodes, mesh.nodes, rtol=0.0, atol=1e-12)
    )
    if not same:
        msg = "reference-pair tables need the structured diagonal grid"
        raise UnsupportedMeshError(msg)


def _anchor_cell(mesh: TriangleMesh, key: PairKey) -> tuple[int, int] | None:
    i0 = max(0, -key.di)
    if i0 + key.di >= mesh.n_cells or key.dj >= mesh.n_cells or i0 >= mesh.n_cells:
        return None
    return i0, 0


def precompute_reference_pairs(
    mesh: TriangleMesh, spec: KernelSpec, budget: QuadratureBudget
) -> PairTable:
    """Integrate one representative pair per translation class.

    Covers every canonical class with triangle distance below 2δ, so each pair of
    :func:`enumerate_pairs` resolves. Classes at distance >= δ get exact zero blocks
    without quadrature.
    """
    _check_structured(mesh)
    header = PairTableHeader(
        format_version=PAIR_TABLE_FORMAT_VERSION,
        n_side=mesh.n_side,
        halo_layers=mesh.halo_layers,
        kernel=spec,
        budget=budget,
    )
    keys = pair_classes(mesh, spec.delta)
    logger.info(f"=== Integrating {len(keys)} reference pair classes (delta={spec.delta}) ===")

    entries: dict[PairKey, ReferencePair] = {}
    integrated = 0
    for key in keys:
        anchor = _anchor_cell(mesh, key)
        if anchor is None:
            continue
        i0, j0 = anchor
        first = mesh.triangle(mesh.triangle_index(i0, j0, key.tau1))
        second = mesh.triangle(mesh.triangle_index(i0 + key.di, j0 + key.dj, key.tau2))
        if key.distance(mesh.h_side) >= spec.delta:
            node_ids = union_node_ids(first, second)
            size = len(node_ids)
            block = PairBlock(k=key.k, node_ids=node_ids, entries=np.zeros((size, size)))
        else:
            block = integrate_pair(first, second, spec, budget)
            integrated += 1
        ids = np.asarray(block.node_ids, dtype=np.int64)
        offsets = np.column_stack(
            (ids % mesh.nodes_per_side - i0, ids // mesh.nodes_per_side - j0)
        )
        entries[key] = ReferencePair(key=key, block=block, node_offsets=offsets)

    logger.info(f"Integrated {integrated} non-zero classes, {len(entries) - integrated} zero")
    return PairTable(header=header, entries=entries)


def save_pair_table(table: PairTable, path: Path) -> None:
    """Write ``table`` to a compressed npz file."""
    refs = list(table.entries.values())
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(
        path,
        header=np.array(json.dumps(table.header.to_dict(), sort_keys=True)),
        keys=np.array([[r.key.di, r.key.dj, r.key.tau1, r.key.tau2] for r in refs], dtype=np.int64)
        .reshape(-1, 4),
        k=np.array([r.block.k for r in refs], dtype=np.int64),
        sizes=np.array([len(r.block.node_ids) for r in refs], dtype=np.int64),
        node_ids=np.concatenate([np.asarray(r.block.node_ids, dtype=np.int64) for r in refs])
        if refs
        else np.empty(0, dtype=np.int64),
        offsets=np.concatenate([r.node_offsets for r in refs]).reshape(-1, 2)
        if refs
        else np.empty((0, 2), dtype=np.int64),
        blocks=np.concatenate([r.block.entries.ravel() for r in refs])
        if refs
        else np.empty(0),
    )


def load_pair_table(path: Path, expected: PairTableHeader) -> PairTable:
    """Read a table written by :func:`save_pair_table` and check its header."""
    with np.load(path, allow_pickle=False) as data:
        stored = json.loads(str(data["header"]))
        if stored != expected.to_dict():
            msg = f"cached pair table {path} was built for {stored}, not {expected.to_dict()}"
            raise CacheMismatchError(msg)
        keys = data["keys"]
        ks = data["k"]
        sizes = data["sizes"]
        node_ids = data["node_ids"]
        offsets = data["offsets"]
        blocks = data["blocks"]

    entries: dict[PairKey, ReferencePair] = {}
    node_start = 0
    block_start = 0
    for row, k, size in zip(keys, ks, sizes, strict=True):
        key = PairKey(*(int(v) for v in row))
        ids = tuple(int(v) for v in node_ids[node_start : node_start + size])
        block = blocks[block_start : block_start + size * size].reshape(size, size).copy()
        entries[key] = ReferencePair(
            key=key,
            block=PairBlock(k=int(k), node_ids=ids, entries=block),
            node_offsets=offsets[node_start : node_start + size].copy(),
        )
        node_start += int(size)
        block_start += int(size * size)
    return PairTable(header=expected, entries=entries)


def cached_reference_pairs(
    mesh: TriangleMesh, spec: KernelSpec, budget: QuadratureBudget, cache_dir: Path | None
) -> PairTable:
    """Load the table from ``cache_dir`` when a matching file exists, else build and store it."""
    if cache_dir is None:
        return precompute_reference_pairs(mesh, spec, budget)
    header = PairTableHeader(
        format_version=PAIR_TABLE_FORMAT_VERSION,
        n_side=mesh.n_side,
        halo_layers=mesh.halo_layers,
        kernel=spec,
        budget=budget,
    )
    path = cache_dir / f"pair_table_n{mesh.n_side}_{header.digest()}.npz"
    if path.exists():
        try:
            table = load_pair_table(path, header)
            logger.info(f"Loaded {len(table)} reference pairs from {path}")
            return table
        except CacheMismatchError as e:
            logger.warning(f"Ignoring stale cache: {e}")
    table = precompute_reference_pairs(mesh, spec, budget)
    save_pair_table(table, path)
    logger.info(f"Cached reference pairs at {path}")
    return table


@dataclass(frozen=True, eq=False)
class _ClassPlan:
    pairs: slice
    weight: float
    t1: IntArray
    t2: IntArray
    anchors: IntArray
    offsets: IntArray
    stencil_rows: IntArray
    entries: FloatArray


class NonlocalAssembler:
    """Assembles K(ρ), pair energies and compliance gradients for one pair list.

    Within one class and one local row α the scattered entries never collide, so each
    class adds into the stencil with one fancy-indexed update per row.
    """

    def __init__(self, pairs: PairList, table: PairTable) -> None:
        """Resolve every pair class against ``table`` and index the stencil offsets."""
        mesh = pairs.mesh
        if not table.matches(mesh):
            msg = (
                f"pair table built for n_side={table.header.n_side}, "
                f"halo={table.header.halo_layers} used on n_side={mesh.n_side}, "
                f"halo={mesh.halo_layers}"
            )
            raise InvalidArgumentError(msg)
        self.mesh = mesh
        self.pairs = pairs

        per_side = mesh.nodes_per_side
        stencil: dict[int, int] = {}
        plans: list[_ClassPlan] = []
        for c, key in enumerate(pairs.classes):
            reference = table.entries.get(key)
            if reference is None:
                msg = f"pair class {key} is not in the table"
                raise InvalidArgumentError(msg)
            if reference.is_zero:
                continue
            offsets = reference.node_offsets[:, 1] * per_side + reference.node_offsets[:, 0]
            rows = np.empty((offsets.size, offsets.size), dtype=np.int64)
            for a, off_a in enumerate(offsets):
                for b, off_b in enumerate(offsets):
                    rows[a, b] = stencil.setdefault(int(off_b - off_a), len(stencil))
            members = pairs.class_slice(c)
            t1 = pairs.t1[members]
            plans.append(
                _ClassPlan(
                    pairs=members,
                    weight=1.0 if key.k == 2 else 2.0,
                    t1=t1,
                    t2=pairs.t2[members],
                    anchors=mesh.anchor_node(t1),
                    offsets=offsets.astype(np.int64),
                    stencil_rows=rows,
                    entries=reference.block.entries,
                )
            )
        self._plans = plans
        self._stencil_offsets = np.fromiter(stencil.keys(), dtype=np.int64, count=len(stencil))
        logger.debug(
            f"Assembler ready: {len(plans)} non-zero classes, {len(stencil)} stencil offsets"
        )

    def stiffness(self, design: DesignField) -> sparse.csr_matrix:
        """K(ρ) restricted to the free nodes."""
        return self.stiffness_from_scale(design.scale)

    def stiffness_from_scale(self, scale: FloatArray) -> sparse.csr_matrix:
        """K for per-element factors s: Σ_pairs w · s(t1) · s(t2) · B."""
        mesh = self.mesh
        if scale.shape != (mesh.n_triangles,):
            msg = f"expected {mesh.n_triangles} element factors, got shape {scale.shape}"
            raise InvalidArgumentError(msg)
        stencil = np.zeros((self._stencil_offsets.size, mesh.n_nodes))
        for plan in self._plans:
            factor = plan.weight * scale[plan.t1] * scale[plan.t2]
            for a in range(plan.offsets.size):
                columns = plan.anchors + plan.offsets[a]
                stencil[plan.stencil_rows[a][:, None], columns[None, :]] += (
                    plan.entries[a][:, None] * factor[None, :]
                )
        which, nodes = np.nonzero(stencil)
        values = stencil[which, nodes]
        rows = mesh.free_index[nodes]
        cols = mesh.free_index[nodes + self._stencil_offsets[which]]
        keep = (rows >= 0) & (cols >= 0)
        K = sparse.csr_matrix(
            (values[keep], (rows[keep], cols[keep])), shape=(mesh.n_free, mesh.n_free)
        )
        # (i, j) and (j, i) accumulate in different orders
        return ((K + K.T) * 0.5).tocsr()

    def pair_energies(self, u: FloatArray) -> FloatArray:
        """uᵀ B u for every pair of the list, zero for pairs beyond the support."""
        if u.shape != (self.mesh.n_nodes,):
            msg = f"state must have {self.mesh.n_nodes} nodal values, got shape {u.shape}"
            raise InvalidArgumentError(msg)
        energies = np.zeros(len(self.pairs))
        for plan in self._plans:
            local = u[plan.anchors[:, None] + plan.offsets[None, :]]
            energies[plan.pairs] = np.einsum("pi,ij,pj->p", local, plan.entries, local)
        return energies

    def gradient(self, design: DesignField, u: FloatArray) -> FloatArray:
        """∂c/∂ρ_e = -p ρ_e^{p/2-1} Σ_{t'} s_{t'} E(e, t'), summed over both pair orders."""
        energies = self.pair_energies(u)
        scale = design.scale
        t1 = self.pairs.t1
        t2 = self.pairs.t2
        size = self.mesh.n_triangles
        off = t1 != t2
        same = ~off
        total = (
            np.bincount(t1[off], weights=scale[t2[off]] * energies[off], minlength=size)
            + np.bincount(t2[off], weights=scale[t1[off]] * energies[off], minlength=size)
            + np.bincount(t1[same], weights=scale[t1[same]] * energies[same], minlength=size)
        )
        return -design.p * design.rho ** (0.5 * design.p - 1.0) * total


@functools.lru_cache(maxsize=4)
def assembler_for(pairs: PairList, table: PairTable) -> NonlocalAssembler:
    """Shared assembler for a (pairs, table) combination."""
    return NonlocalAssembler(pairs, table)


def assemble_stiffness(
    mesh: TriangleMesh, pairs: PairList, table: PairTable, design: DesignField
) -> sparse.csr_matrix:
    """Nonlocal stiffness K(ρ) on the free nodes of ``mesh``."""
    if pairs.mesh is not mesh:
        msg = "pair list was enumerated on a different mesh"
        raise InvalidArgumentError(msg)
    if design.rho.shape != (mesh.n_triangles,):
        msg = f"design has {design.rho.size} values for {mesh.n_triangles} triangles"
        raise InvalidArgumentError(msg)
    return assembler_for(pairs, table).stiffness(design)


def pair_energies(u: FloatArray, pairs: PairList, table: PairTable) -> FloatArray:
    """Per-pair energies E(t1, t2) = u_Nᵀ B u_N of a full nodal state."""
    return assembler_for(pairs, table).pair_energies(u)


def load_points(mesh: TriangleMesh) -> FloatArray:
    """Quadrature points of the load rule on the interior triangles, element-major."""
    bary, _ = triangle_rule(3)
    corners = mesh.nodes[mesh.triangles[mesh.interior_mask]]
    origin = corners[:, 0]
    e1 = corners[:, 1] - origin
    e2 = corners[:, 2] - origin
    points = (
        origin[:, None, :]
        + bary[None, :, :1] * e1[:, None, :]
        + bary[None, :, 1:] * e2[:, None, :]
    )
    return points.reshape(-1, 2)


def assemble_load_values(
    mesh: TriangleMesh, values: FloatArray, *, reduce: bool = True
) -> FloatArray:
    """Load vector from source values given at :func:`load_points`."""
    bary, weights = triangle_rule(3)
    n_quad = weights.size
    interior = mesh.triangles[mesh.interior_mask]
    if values.shape != (interior.shape[0] * n_quad,):
        msg = f"expected {interior.shape[0] * n_quad} source values, got shape {values.shape}"
        raise InvalidArgumentError(msg)
    if not np.all(np.isfinite(values)):
        msg = "source term is not finite at some quadrature points"
        raise InvalidArgumentError(msg)
    hats = np.column_stack((1.0 - bary[:, 0] - bary[:, 1], bary[:, 0], bary[:, 1]))
    areas = mesh.areas[mesh.interior_mask]
    local = 2.0 * areas[:, None] * ((values.reshape(-1, n_quad) * weights) @ hats)
    load = np.bincount(interior.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)
    return load[mesh.free_nodes] if reduce else load


def assemble_load(
    mesh: TriangleMesh, f: SourceFunction | float, *, reduce: bool = True
) -> FloatArray:
    """b_a = ∫_Ω f φ_a with the 3-point rule.

    Constrained entries are dropped unless ``reduce=False``.
    """
    points = load_points(mesh)
    if callable(f):
        values = np.asarray(f(points[:, 0], points[:, 1]), dtype=np.float64)
    else:
        if not math.isfinite(f):
            msg = f"source term must be finite, got {f!r}"
            raise InvalidArgumentError(msg)
        values = np.full(points.shape[0], float(f))
    return assemble_load_values(mesh, values, reduce=reduce)


def assemble_stiffness_bruteforce(
    mesh: TriangleMesh,
    pairs: PairList,
    spec: KernelSpec,
    budget: QuadratureBudget,
    design: DesignField,
) -> sparse.csr_matrix:
    """K(ρ) by integrating every pair directly, without the reference table.

    One quadrature per pair; meant for small meshes and cross-checks.
    """
    free = mesh.free_nodes
    if len(pairs) == 0:
        return sparse.csr_matrix((free.size, free.size))
    scale = design.scale
    rows: list[IntArray] = []
    cols: list[IntArray] = []
    values: list[FloatArray] = []
    for t1, t2 in zip(pairs.t1, pairs.t2, strict=True):
        first = mesh.triangle(int(t1))
        second = mesh.triangle(int(t2))
        block = integrate_pair(first, second, spec, budget)
        weight = (1.0 if t1 == t2 else 2.0) * scale[t1] * scale[t2]
        ids = np.asarray(block.node_ids, dtype=np.int64)
        rows.append(np.repeat(ids, ids.size))
        cols.append(np.tile(ids, ids.size))
        values.append(weight * block.entries.ravel())
    size = mesh.n_nodes
    full = sparse.csr_matrix(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    )
    return full[free][:, free].tocsr()
