"""Legacy-VTK export of meshes, designs and states through meshio."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import TYPE_CHECKING

import meshio
import numpy as np

from src.nonlocal_topopt.exceptions import InvalidArgumentError

if TYPE_CHECKING:
    from src.nonlocal_topopt.grid import TriangleMesh
    from src.nonlocal_topopt.types import FloatArray

logger = logging.getLogger(__name__)


def to_meshio(
    mesh: TriangleMesh,
    *,
    rho: FloatArray | None = None,
    p: float = 1.0,
    u: FloatArray | None = None,
) -> meshio.Mesh:
    """meshio mesh with cell data ``region`` (and ``rho``, ``kappa_loc``) and point data ``u``."""
    # VTK wants 3D points
    points = np.column_stack((mesh.nodes, np.zeros(mesh.n_nodes)))
    cell_data: dict[str, list[np.ndarray]] = {"region": [mesh.element_region.astype(np.int32)]}
    if rho is not None:
        if rho.shape != (mesh.n_triangles,):
            msg = f"expected {mesh.n_triangles} densities, got shape {rho.shape}"
            raise InvalidArgumentError(msg)
        cell_data["rho"] = [np.asarray(rho, dtype=np.float64)]
        cell_data["kappa_loc"] = [np.asarray(rho, dtype=np.float64) ** p]
    point_data: dict[str, np.ndarray] = {}
    if u is not None:
        if u.shape != (mesh.n_nodes,):
            msg = f"expected {mesh.n_nodes} nodal values, got shape {u.shape}"
            raise InvalidArgumentError(msg)
        point_data["u"] = np.asarray(u, dtype=np.float64)
    return meshio.Mesh(
        points=points,
        cells=[("triangle", mesh.triangles.astype(np.int64))],
        cell_data=cell_data,
        point_data=point_data,
    )


def write_vtk(
    path: Path,
    mesh: TriangleMesh,
    *,
    rho: FloatArray | None = None,
    p: float = 1.0,
    u: FloatArray | None = None,
) -> Path:
    """Write an ASCII legacy ``.vtk`` file and return its path."""
    path.parent.mkdir(parents=True, exist_ok=True)
    meshio.write(path, to_meshio(mesh, rho=rho, p=p, u=u), file_format="vtk", binary=False)
    logger.debug(f"Wrote {path}")
    return path
