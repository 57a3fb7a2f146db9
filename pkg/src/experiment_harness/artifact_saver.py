"""CSV and VTK artifact saving with integrated diff tracking."""

from __future__ import annotations

import csv
import io
import logging
from typing import TYPE_CHECKING

from src.experiment_harness.diff_tracker import ArtifactDiffTracker
from src.nonlocal_topopt.exceptions import InvalidArgumentError
from src.nonlocal_topopt.vtk_export import write_vtk

if TYPE_CHECKING:
    from pathlib import Path

    from src.experiment_harness.experiment_types import Columns, ResultRows
    from src.nonlocal_topopt.grid import TriangleMesh
    from src.nonlocal_topopt.types import FloatArray

logger = logging.getLogger(__name__)


def format_table(rows: ResultRows, columns: Columns) -> str:
    """CSV text with a header line; floats keep their shortest round-trip form."""
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        record = row.to_dict()
        if set(record) != set(columns):
            msg = f"row fields {sorted(record)} do not match columns {list(columns)}"
            raise InvalidArgumentError(msg)
        writer.writerow(record)
    return buffer.getvalue()


class ArtifactSaver:
    """Saves experiment tables and fields with integrated diff tracking."""

    def __init__(self, output_dir: Path) -> None:
        """Initialize the saver below ``output_dir`` with diff tracking."""
        self.output_dir = output_dir
        self.diff_tracker = ArtifactDiffTracker(output_dir)

    def save_table(self, rows: ResultRows, columns: Columns, path: Path) -> None:
        """Save rows as CSV with diff tracking.

        Args:
            rows: Result rows whose ``to_dict()`` keys are exactly ``columns``
            columns: Header, in column order
            path: Where to save the CSV file
        """
        content = format_table(rows, columns)
        old_content = self.diff_tracker.load_existing_artifact(path)
        self.diff_tracker.track_artifact_changes(path, old_content, content)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content, encoding="utf-8")
        logger.info(f"Saved table: {path}")

    def save_fields(
        self,
        path: Path,
        mesh: TriangleMesh,
        *,
        rho: FloatArray | None = None,
        p: float = 1.0,
        u: FloatArray | None = None,
    ) -> None:
        """Save a legacy VTK file; changes are reported without a diff."""
        old_content = self.diff_tracker.load_existing_artifact(path)
        write_vtk(path, mesh, rho=rho, p=p, u=u)
        new_content = path.read_text(encoding="utf-8")
        self.diff_tracker.track_artifact_changes(path, old_content, new_content, show_diff=False)
        logger.info(f"Saved fields: {path}")

    def log_summary(self) -> None:
        """Log diff summary."""
        self.diff_tracker.log_summary()
