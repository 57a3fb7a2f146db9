from __future__ import annotations

import pytest

from src.nonlocal_topopt.assembly import PairTable, precompute_reference_pairs
from src.nonlocal_topopt.grid import PairList, TriangleMesh, build_grid, enumerate_pairs
from src.nonlocal_topopt.kernel import KernelSpec
from src.nonlocal_topopt.quadrature import QuadratureBudget

# 16 free nodes, 162 triangles: large enough to be non-trivial, small enough for brute force
SMALL_N_SIDE = 5
SMALL_DELTA = 0.25


@pytest.fixture(scope="session")
def small_spec() -> KernelSpec:
    return KernelSpec.create(SMALL_DELTA, 1.0 / 3.0)


@pytest.fixture(scope="session")
def small_budget() -> QuadratureBudget:
    return QuadratureBudget.uniform(5)


@pytest.fixture(scope="session")
def small_mesh() -> TriangleMesh:
    return build_grid(SMALL_N_SIDE, SMALL_DELTA)


@pytest.fixture(scope="session")
def small_pairs(small_mesh: TriangleMesh) -> PairList:
    return enumerate_pairs(small_mesh, SMALL_DELTA)


@pytest.fixture(scope="session")
def small_table(
    small_mesh: TriangleMesh, small_spec: KernelSpec, small_budget: QuadratureBudget
) -> PairTable:
    return precompute_reference_pairs(small_mesh, small_spec, small_budget)


class RecordingProcessor:
    """Keeps experiment tables and field names in memory instead of writing them."""

    def __init__(self) -> None:
        self.tables: dict[str, tuple] = {}
        self.fields: list[str] = []

    def process_table(self, kind, name, columns, experiment, *args, **kwargs):
        rows = experiment(*args, **kwargs)
        self.tables[f"{kind}/{name}"] = (columns, rows)
        return rows

    def process_fields(self, kind, name, mesh, *, rho=None, p=1.0, u=None) -> None:
        self.fields.append(f"{kind}/{name}")


@pytest.fixture
def processor() -> RecordingProcessor:
    return RecordingProcessor()


@pytest.fixture(scope="module")
def module_processor() -> RecordingProcessor:
    return RecordingProcessor()
