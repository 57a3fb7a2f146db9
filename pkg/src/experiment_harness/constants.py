"""Common constants for the experiment harness."""

from __future__ import annotations

import pathlib

# Output directories
_REPO_DIR = pathlib.Path(__file__).parent.parent.parent
DEFAULT_OUTPUT_DIR = _REPO_DIR / "results"
DEFAULT_CACHE_DIR = _REPO_DIR / ".pair_cache"
RUN_LOG_NAME = "run.log"

# Design bounds and problem defaults
RHO_MIN = 1e-3
RHO_MAX = 1.0
DEFAULT_GAMMA = 0.4
DEFAULT_S = 1.0 / 3.0
DEFAULT_BETA = 3.0
DEFAULT_N_SIDE = 20
DEFAULT_DELTA = 0.1
DEFAULT_N_SIDE_LEVELS = (10, 20, 40)
DEFAULT_DELTA_LEVELS = (0.2, 0.1, 0.05)
DEFAULT_MMS_TOL = 1e-8

# Γ-convergence test problem
GAMMA_TEST_CENTRE = (0.5, 2.0 / 3.0)
GAMMA_TEST_SIGMA = 0.1
GAMMA_TEST_P = 2.0

# Names allowed in `expression` sources
EXPRESSION_NAMESPACE_NAMES = ("x", "y", "sin", "cos", "exp", "sqrt", "pi")

# CSV schemas
GRID_INFO_COLUMNS = (
    "n_side",
    "delta",
    "halo_layers",
    "n_nodes",
    "n_triangles",
    "n_interior",
    "n_free",
    "n_pairs",
    "h",
)
QUAD_CONVERGENCE_COLUMNS = ("k", "points_per_dim", "rel_error")
MMS_CONVERGENCE_COLUMNS = ("n_side", "h", "rel_l2_error")
DELTA_CONVERGENCE_COLUMNS = ("delta", "n_side", "h", "l2_error")
HISTORY_COLUMNS = ("iter", "J", "design_change", "lambda", "volume")
SUMMARY_COLUMNS = ("delta", "h", "J_star", "N")
CROSS_CHECK_COLUMNS = ("design_delta", "eval_delta", "compliance")
