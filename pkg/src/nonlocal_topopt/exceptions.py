"""Exceptions raised by the nonlocal topology optimization core."""

from __future__ import annotations

from typing import TYPE_CHECKING, Any, ClassVar

if TYPE_CHECKING:
    import numpy as np
    from numpy.typing import NDArray


class NonlocalTopoptError(Exception):
    """Base class for all errors raised by this package.

    ``error_class`` is the machine-parsable tag printed by the command-line driver.
    """

    error_class: ClassVar[str] = "error"


class InvalidArgumentError(NonlocalTopoptError, ValueError):
    """An argument is outside its admissible range."""

    error_class: ClassVar[str] = "invalid-argument"


class KernelDomainError(InvalidArgumentError):
    """The singular kernel was evaluated at r = 0."""

    error_class: ClassVar[str] = "domain-error"


class UnsupportedMeshError(NonlocalTopoptError):
    """The mesh is not the structured diagonal grid required by the reference-pair table."""

    error_class: ClassVar[str] = "unsupported"


class CacheMismatchError(NonlocalTopoptError):
    """A pair-table cache file does not match the requested key or format version."""

    error_class: ClassVar[str] = "cache-mismatch"


class SolverConvergenceError(NonlocalTopoptError):
    """Preconditioned CG hit its iteration limit."""

    error_class: ClassVar[str] = "non-convergence"

    def __init__(self, message: str, best_iterate: NDArray[np.float64], residual: float) -> None:
        """Keep the best iterate and its relative residual for the caller."""
        super().__init__(message)
        self.best_iterate = best_iterate
        self.residual = residual


class QuadratureConvergenceError(NonlocalTopoptError):
    """Refinement of a nested quadrature did not reach the requested tolerance."""

    error_class: ClassVar[str] = "quadrature-non-convergence"

    def __init__(self, message: str, estimate: NDArray[np.float64], error_estimate: float) -> None:
        """Keep the last estimate together with its achieved error."""
        super().__init__(message)
        self.estimate = estimate
        self.error_estimate = error_estimate


class OptimizationAbortedError(NonlocalTopoptError):
    """The OC loop stopped because a state solve failed."""

    error_class: ClassVar[str] = "optimization-aborted"

    def __init__(self, message: str, history: Any) -> None:
        """Keep the history accumulated before the failure."""
        super().__init__(message)
        self.history = history
