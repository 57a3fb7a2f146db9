"""Manufactured solutions and the source terms the experiments are driven with.

The nonlocal right-hand side of the h-convergence test has no closed form. It is
evaluated pointwise in polar coordinates around each point: radial panels break at
the distances to the sides and corners of the unit square, angular arcs break where
the circle of radius r crosses a side, so every panel sees a smooth integrand. The
first radial panel carries the r^{1-2s} singularity as a Gauss–Jacobi weight; the
rule order is raised until two successive orders agree to the requested tolerance.
"""

from __future__ import annotations

import ast
import functools
import logging
import math
from typing import TYPE_CHECKING, Final

import numpy as np

from src.experiment_harness.constants import (
    EXPRESSION_NAMESPACE_NAMES,
    GAMMA_TEST_CENTRE,
    GAMMA_TEST_SIGMA,
    RHO_MAX,
    RHO_MIN,
)
from src.nonlocal_topopt.exceptions import InvalidArgumentError, QuadratureConvergenceError
from src.nonlocal_topopt.quadrature import gauss_jacobi_unit, gauss_legendre_unit

if TYPE_CHECKING:
    from src.experiment_harness.config import RunConfig
    from src.nonlocal_topopt.kernel import KernelSpec
    from src.nonlocal_topopt.types import FloatArray, SourceFunction

logger = logging.getLogger(__name__)

TWO_PI: Final = 2.0 * math.pi

# Rule orders tried per radial panel and angular arc
MMS_START_ORDER = 8
MMS_ORDER_STEP = 8
MMS_MAX_ORDER = 40

# Upper bound on integrand samples held in memory at once
MMS_SAMPLES_PER_CHUNK = 4_000_000

_ALLOWED_EXPRESSION_NODES = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Call,
    ast.Name,
    ast.Load,
    ast.Constant,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.Mod,
    ast.USub,
    ast.UAdd,
)


def _inside_unit_square(x: FloatArray, y: FloatArray) -> np.ndarray:
    return (x >= 0.0) & (x <= 1.0) & (y >= 0.0) & (y <= 1.0)


def mms_solution(x: FloatArray, y: FloatArray) -> FloatArray:
    """[x(1-x)y(1-y)]² sin(2π(x + y²)) on the unit square, zero outside."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    bump = (x * (1.0 - x) * y * (1.0 - y)) ** 2
    return np.where(_inside_unit_square(x, y), bump * np.sin(TWO_PI * (x + y * y)), 0.0)


def _radial_breaks(points: FloatArray, delta: float) -> FloatArray:
    """0, the side and corner distances below δ, and δ; shape (P, 10), sorted."""
    x = points[:, 0]
    y = points[:, 1]
    distances = np.column_stack(
        (
            x,
            1.0 - x,
            y,
            1.0 - y,
            np.hypot(x, y),
            np.hypot(1.0 - x, y),
            np.hypot(x, 1.0 - y),
            np.hypot(1.0 - x, 1.0 - y),
        )
    )
    size = points.shape[0]
    breaks = np.column_stack((np.zeros(size), distances, np.full(size, delta)))
    return np.sort(np.clip(breaks, 0.0, delta), axis=1)


def _crossings(offset: FloatArray, r: FloatArray, *, cosine: bool) -> tuple[FloatArray, FloatArray]:
    """Both angles where offset + r·cos θ (or sin θ) hits zero; 0 where it never does."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(r > 0.0, -offset / r, 2.0)
    valid = np.abs(ratio) <= 1.0
    clipped = np.clip(ratio, -1.0, 1.0)
    if cosine:
        first = np.arccos(clipped)
        second = TWO_PI - first
    else:
        base = np.arcsin(clipped)
        first = np.mod(base, TWO_PI)
        second = math.pi - base
    return np.where(valid, first, 0.0), np.where(valid, second, 0.0)


def _angular_breaks(points: FloatArray, r: FloatArray) -> FloatArray:
    """0, 2π and the side crossings of the circle of radius r; shape r.shape + (10,)."""
    x = points[:, 0][:, None]
    y = points[:, 1][:, None]
    angles = [np.zeros_like(r), np.full_like(r, TWO_PI)]
    angles.extend(_crossings(x, r, cosine=True))
    angles.extend(_crossings(x - 1.0, r, cosine=True))
    angles.extend(_crossings(y, r, cosine=False))
    angles.extend(_crossings(y - 1.0, r, cosine=False))
    return np.sort(np.stack(angles, axis=-1), axis=-1)


def _radial_rule(
    points: FloatArray, spec: KernelSpec, order: int
) -> tuple[FloatArray, FloatArray]:
    """Radial nodes and weights including r^{1-2s}; shape (P, panels · order)."""
    breaks = _radial_breaks(points, spec.delta)
    lo = breaks[:, :-1]
    width = breaks[:, 1:] - lo
    gamma = 1.0 - 2.0 * spec.s

    t_jac, w_jac = gauss_jacobi_unit(order, gamma)
    t_leg, w_leg = gauss_legendre_unit(order)

    first_width = width[:, :1]
    first_nodes = first_width * t_jac
    first_weights = first_width ** (gamma + 1.0) * w_jac

    rest_nodes = lo[:, 1:, None] + width[:, 1:, None] * t_leg
    with np.errstate(divide="ignore"):
        power = np.where(rest_nodes > 0.0, rest_nodes, 1.0) ** gamma
    rest_weights = width[:, 1:, None] * w_leg * power

    nodes = np.concatenate((first_nodes, rest_nodes.reshape(points.shape[0], -1)), axis=1)
    weights = np.concatenate((first_weights, rest_weights.reshape(points.shape[0], -1)), axis=1)
    return nodes, weights


def _rhs_at_order(
    u: SourceFunction, spec: KernelSpec, points: FloatArray, order: int
) -> FloatArray:
    r, radial_weights = _radial_rule(points, spec, order)

    breaks = _angular_breaks(points, r)
    lo = breaks[..., :-1]
    width = breaks[..., 1:] - lo
    t, w = gauss_legendre_unit(order)
    theta = lo[..., None] + width[..., None] * t
    arc_weights = width[..., None] * w

    x = points[:, 0][:, None, None, None]
    y = points[:, 1][:, None, None, None]
    radius = r[:, :, None, None]
    shifted = u(x + radius * np.cos(theta), y + radius * np.sin(theta))
    centre = u(points[:, 0], points[:, 1])[:, None, None, None]
    # Θ(r) = ∫_0^{2π} u(x + rθ) - u(x) dθ
    theta_integral = np.sum(arc_weights * (shifted - centre), axis=(2, 3))

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(r > 0.0, theta_integral / (r * r), 0.0)
    integrand = spec.c_nrm * spec.radial_factor(r) * ratio
    return -2.0 * np.sum(radial_weights * integrand, axis=1)


def mms_rhs_nonlocal(
    u: SourceFunction,
    spec: KernelSpec,
    points: FloatArray,
    tol: float = 1e-8,
) -> FloatArray:
    """f = -2 ∫_0^δ ∫_0^{2π} A(r) (u(x + r(cos θ, sin θ)) - u(x)) / r dθ dr at each point.

    ``u`` must be zero-extended outside the unit square. Each point is refined on its own
    until successive rule orders differ by at most ``tol``.

    Raises:
        QuadratureConvergenceError: When some point does not settle by the largest order.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.ndim != 2 or points.shape[1] != 2:
        msg = f"points must have shape (P, 2), got {points.shape}"
        raise InvalidArgumentError(msg)
    if not np.all(_inside_unit_square(points[:, 0], points[:, 1])):
        msg = "manufactured right-hand side requested outside the unit square"
        raise InvalidArgumentError(msg)
    if tol <= 0.0:
        msg = f"tolerance must be positive, got {tol}"
        raise InvalidArgumentError(msg)

    size = points.shape[0]
    result = np.zeros(size)
    previous: FloatArray | None = None
    pending = np.arange(size)
    for order in range(MMS_START_ORDER, MMS_MAX_ORDER + 1, MMS_ORDER_STEP):
        samples_per_point = 9 * 9 * order * order
        chunk = max(1, MMS_SAMPLES_PER_CHUNK // samples_per_point)
        current = np.concatenate(
            [
                _rhs_at_order(u, spec, points[pending[start : start + chunk]], order)
                for start in range(0, pending.size, chunk)
            ]
        )
        if previous is not None:
            settled = np.abs(current - previous) <= tol
            result[pending[settled]] = current[settled]
            pending = pending[~settled]
            current = current[~settled]
            if pending.size == 0:
                logger.debug(f"Manufactured source settled at order {order} for {size} points")
                return result
        previous = current

    assert previous is not None
    estimate = result.copy()
    estimate[pending] = previous
    msg = f"{pending.size} of {size} points did not reach tol={tol:.1e} by order {MMS_MAX_ORDER}"
    raise QuadratureConvergenceError(msg, estimate=estimate, error_estimate=tol)


def mms_source(spec: KernelSpec, tol: float = 1e-8) -> SourceFunction:
    """Source term of the manufactured solution, callable on coordinate arrays."""

    def source(x: FloatArray, y: FloatArray) -> FloatArray:
        points = np.column_stack((np.ravel(x), np.ravel(y)))
        return mms_rhs_nonlocal(mms_solution, spec, points, tol).reshape(np.shape(x))

    return source


def gamma_test_density(
    x: FloatArray, y: FloatArray, rho_min: float = RHO_MIN, rho_max: float = RHO_MAX
) -> FloatArray:
    """ρ = ρ̲ + (ρ̄ - ρ̲) exp(-|x - m|² / σ) with m = (1/2, 2/3), σ = 0.1."""
    mx, my = GAMMA_TEST_CENTRE
    bump = np.exp(-((x - mx) ** 2 + (y - my) ** 2) / GAMMA_TEST_SIGMA)
    return rho_min + (rho_max - rho_min) * bump


def gamma_test_solution(x: FloatArray, y: FloatArray) -> FloatArray:
    """u = sin(2πx) sin(πy)."""
    return np.sin(TWO_PI * x) * np.sin(math.pi * y)


def gamma_test_rhs(
    x: FloatArray, y: FloatArray, rho_min: float = RHO_MIN, rho_max: float = RHO_MAX
) -> FloatArray:
    """f = -div(ρ² ∇u) = -(ρ² Δu + 2ρ ∇ρ·∇u) for the Γ-test density and solution."""
    mx, my = GAMMA_TEST_CENTRE
    bump = (rho_max - rho_min) * np.exp(-((x - mx) ** 2 + (y - my) ** 2) / GAMMA_TEST_SIGMA)
    rho = rho_min + bump
    drho_dx = -2.0 * (x - mx) / GAMMA_TEST_SIGMA * bump
    drho_dy = -2.0 * (y - my) / GAMMA_TEST_SIGMA * bump
    u = gamma_test_solution(x, y)
    du_dx = TWO_PI * np.cos(TWO_PI * x) * np.sin(math.pi * y)
    du_dy = math.pi * np.sin(TWO_PI * x) * np.cos(math.pi * y)
    laplacian = -5.0 * math.pi**2 * u
    return -(rho * rho * laplacian + 2.0 * rho * (drho_dx * du_dx + drho_dy * du_dy))


def expression_source(expression: str) -> SourceFunction:
    """Compile an arithmetic expression in x and y using sin, cos, exp, sqrt and pi."""
    try:
        tree = ast.parse(expression, mode="eval")
    except SyntaxError as e:
        msg = f"cannot parse source expression {expression!r}: {e.msg}"
        raise InvalidArgumentError(msg) from e
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_EXPRESSION_NODES):
            msg = f"{type(node).__name__} is not allowed in source expressions"
            raise InvalidArgumentError(msg)
        if isinstance(node, ast.Name) and node.id not in EXPRESSION_NAMESPACE_NAMES:
            msg = f"unknown name {node.id!r} in source expression"
            raise InvalidArgumentError(msg)
        if isinstance(node, ast.Call) and (node.keywords or not isinstance(node.func, ast.Name)):
            msg = "only plain calls of sin, cos, exp and sqrt are allowed"
            raise InvalidArgumentError(msg)
    code = compile(tree, "<source_expression>", "eval")

    def source(x: FloatArray, y: FloatArray) -> FloatArray:
        namespace = {
            "x": x,
            "y": y,
            "sin": np.sin,
            "cos": np.cos,
            "exp": np.exp,
            "sqrt": np.sqrt,
            "pi": math.pi,
        }
        value = eval(code, {"__builtins__": {}}, namespace)  # noqa: S307
        return np.broadcast_to(np.asarray(value, dtype=np.float64), np.shape(x)).copy()

    return source


def source_for(config: RunConfig, spec: KernelSpec | None = None) -> SourceFunction | float:
    """Source term selected by ``config.source``."""
    match config.source:
        case "uniform":
            return 1.0
        case "mms-nonlocal":
            if spec is None:
                msg = "the nonlocal manufactured source needs a kernel"
                raise InvalidArgumentError(msg)
            return mms_source(spec, config.mms_tol)
        case "mms-local-divergence":
            return functools.partial(
                gamma_test_rhs, rho_min=config.rho_min, rho_max=config.rho_max
            )
        case "expression":
            assert config.source_expression is not None
            return expression_source(config.source_expression)
