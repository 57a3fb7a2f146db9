"""Artifact difference tracking and display utilities."""

from __future__ import annotations

import difflib
import logging
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from pathlib import Path

logger = logging.getLogger(__name__)


class ArtifactDiffTracker:
    """Tracks and displays differences between artifacts of repeated runs."""

    def __init__(self, output_dir: Path) -> None:
        """Initialize the diff tracker for artifacts below ``output_dir``."""
        self.output_dir = output_dir
        self.changed_artifacts: list[str] = []
        self.new_artifacts: list[str] = []

    def _relative(self, path: Path) -> str:
        try:
            return str(path.relative_to(self.output_dir))
        except ValueError:
            return str(path)

    def load_existing_artifact(self, path: Path) -> str | None:
        """Load existing artifact content if it exists."""
        if path.exists():
            try:
                return path.read_text(encoding="utf-8")
            except (OSError, UnicodeDecodeError) as e:
                logger.warning(f"Could not read existing artifact {path}: {e}")
        return None

    def log_artifact_diff(self, path: Path, old_content: str, new_content: str) -> None:
        """Log the unified diff between old and new artifact content."""
        if old_content == new_content:
            return

        logger.info(f"\n{'=' * 60}")
        logger.info(f"ARTIFACT CHANGED: {self._relative(path)}")
        logger.info(f"{'=' * 60}")

        diff_lines = list(
            difflib.unified_diff(
                old_content.splitlines(keepends=True),
                new_content.splitlines(keepends=True),
                fromfile="before",
                tofile="after",
                n=1,
            )
        )
        for line in diff_lines:
            if line.startswith(("---", "+++", "@@")):
                logger.info(f"{line.rstrip()}")
            elif line.startswith(("-", "+")):
                logger.info(f"E   {line.rstrip()}")
            else:
                logger.info(f"    {line.rstrip()}")

        logger.info(f"{'=' * 60}\n")

    def track_artifact_changes(
        self, path: Path, old_content: str | None, new_content: str, *, show_diff: bool = True
    ) -> None:
        """Record ``path`` as new or changed and log the diff of text artifacts.

        ``old_content`` is None when nothing existed at ``path`` before the run wrote it.
        """
        relative_path = self._relative(path)
        if old_content is None:
            logger.info(f"NEW ARTIFACT: {relative_path}")
            self.new_artifacts.append(relative_path)
        elif old_content != new_content:
            if show_diff:
                self.log_artifact_diff(path, old_content, new_content)
            else:
                logger.info(f"ARTIFACT CHANGED: {relative_path}")
            self.changed_artifacts.append(relative_path)

    def log_summary(self) -> None:
        """Log a summary of all artifact changes."""
        logger.info(f"\n{'=' * 60}")
        logger.info("EXPERIMENT ARTIFACT SUMMARY")
        logger.info(f"{'=' * 60}")

        if self.new_artifacts:
            logger.info(f"NEW ARTIFACTS ({len(self.new_artifacts)}):")
            for artifact in self.new_artifacts:
                logger.info(f"  + {artifact}")

        if self.changed_artifacts:
            logger.info(f"CHANGED ARTIFACTS ({len(self.changed_artifacts)}):")
            for artifact in self.changed_artifacts:
                logger.info(f"  ~ {artifact}")

        if not self.new_artifacts and not self.changed_artifacts:
            logger.info("No changes detected in any artifacts.")

        logger.info(f"{'=' * 60}\n")
