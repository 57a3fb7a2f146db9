"""Shared type definitions for the nonlocal optimization core."""

from __future__ import annotations

from collections.abc import Callable
from typing import TYPE_CHECKING, Literal, Protocol, TypeGuard, get_args

import numpy as np
from numpy.typing import NDArray

if TYPE_CHECKING:
    from src.nonlocal_topopt.assembly import DesignField
    from src.nonlocal_topopt.solve import StateField

type FloatArray = NDArray[np.float64]
type IntArray = NDArray[np.int64]

# Source term f(x, y) evaluated on arrays of coordinates
type SourceFunction = Callable[[FloatArray, FloatArray], FloatArray]

PairClassLabel = Literal["disjoint-near", "disjoint-straddling", "vertex", "edge", "identical"]


def is_pair_class_label(string: str) -> TypeGuard[PairClassLabel]:
    """Check if string names a quadrature pair class."""
    return string in get_args(PairClassLabel)


class StateModelProtocol(Protocol):
    """Minimal interface the OC loop needs from a state problem.

    Implemented by the nonlocal model and by the local (δ = 0) reference model so that
    one optimizer drives both.
    """

    @property
    def element_areas(self) -> FloatArray:
        """Areas of the design elements."""
        ...

    @property
    def domain_area(self) -> float:
        """|Ω|, the area the volume fraction refers to."""
        ...

    def solve(self, design: DesignField) -> tuple[StateField, float]:
        """Solve the state equation and return the state with its compliance."""
        ...

    def gradient(self, design: DesignField, state: StateField) -> FloatArray:
        """Per-element derivative of the reduced compliance."""
        ...
