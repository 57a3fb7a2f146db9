"""Type definitions for the experiment harness."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from typing import TYPE_CHECKING, Literal, Protocol, TypeGuard, get_args

if TYPE_CHECKING:
    from mashumaro import DataClassDictMixin

    from src.nonlocal_topopt.grid import TriangleMesh
    from src.nonlocal_topopt.types import FloatArray

ExperimentKind = Literal[
    "grid-info",
    "quad-convergence",
    "mms-convergence",
    "delta-convergence",
    "optimize",
    "cross-check",
    "local-optimize",
]

SourceKind = Literal["uniform", "mms-nonlocal", "mms-local-divergence", "expression"]

InitialDesignKind = Literal["uniform", "ramp"]


def is_experiment_kind(
    string: str,
) -> TypeGuard[ExperimentKind]:
    """Check if string names a harness experiment."""
    valid_kinds = get_args(ExperimentKind)
    return string in valid_kinds


type ResultRows = Sequence[DataClassDictMixin]
type Columns = tuple[str, ...]


class ExperimentProcessorProtocol(Protocol):
    """Protocol for storing experiment results.

    Experiments only see this interface, so they can run without knowing where tables
    and fields end up.
    """

    def process_table[**P](
        self,
        kind: ExperimentKind,
        name: str,
        columns: Columns,
        experiment: Callable[P, ResultRows],
        *args: P.args,
        **kwargs: P.kwargs,
    ) -> ResultRows:
        """Run ``experiment``, save its rows as ``<kind>/<name>.csv`` and return them."""
        ...

    def process_fields(
        self,
        kind: ExperimentKind,
        name: str,
        mesh: TriangleMesh,
        *,
        rho: FloatArray | None = None,
        p: float = 1.0,
        u: FloatArray | None = None,
    ) -> None:
        """Save mesh fields as ``<kind>/<name>.vtk``."""
        ...
