"""Main experiment orchestrator."""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from pathlib import Path
from typing import override

from pydantic import ValidationError

from src.experiment_harness.artifact_saver import ArtifactSaver
from src.experiment_harness.config import RunConfig, load_run_config
from src.experiment_harness.experiment_types import (
    Columns,
    ExperimentKind,
    ExperimentProcessorProtocol,
    ResultRows,
)
from src.experiment_harness.experiments import ExperimentRunner
from src.nonlocal_topopt.exceptions import NonlocalTopoptError
from src.nonlocal_topopt.grid import TriangleMesh
from src.nonlocal_topopt.types import FloatArray

logger = logging.getLogger(__name__)


def log_validation_error(e: ValidationError) -> None:
    """Log every field error of a rejected configuration."""
    logger.error("Validation error in run configuration:")
    for error in e.errors():
        logger.error(f"  Field: {error.get('loc', 'Unknown')}")
        logger.error(f"  Type: {error.get('type', 'Unknown')}")
        logger.error(f"  Message: {error.get('msg', 'Unknown')}")
        logger.error(f"  Input: {error.get('input', 'Unknown')}")
    logger.error(f"Full validation error: {e}")


def configure_run(
    path: Path | None, overrides: list[str] | None = None, **fixed: object
) -> RunConfig:
    """Load and validate the run configuration, logging field errors before re-raising."""
    try:
        return load_run_config(path, overrides, **fixed)
    except ValidationError as e:
        log_validation_error(e)
        raise


class ExperimentOrchestrator(ExperimentProcessorProtocol):
    """Main orchestrator for one harness run.

    Implements ExperimentProcessorProtocol so that ExperimentRunner only sees how to hand
    over tables and fields, not where the artifact saver puts them.
    """

    def __init__(self, config: RunConfig) -> None:
        """Initialize the orchestrator for a validated configuration."""
        self.config = config
        self.artifact_saver = ArtifactSaver(config.output_dir)

    @override
    def process_table[**P](
        self,
        kind: ExperimentKind,
        name: str,
        columns: Columns,
        experiment: Callable[P, ResultRows],
        *args: P.args,
        **kwargs: P.kwargs,
    ) -> ResultRows:
        """Run ``experiment``, save its rows as CSV and return them."""
        logger.info(f"Running {kind}/{name}...")
        started = time.perf_counter()
        try:
            rows = experiment(*args, **kwargs)
        except NonlocalTopoptError as e:
            logger.error(f"Failed to run {kind}/{name}: [{e.error_class}] {e}")
            raise

        table_path = self.config.output_dir / kind / f"{name}.csv"
        self.artifact_saver.save_table(rows, columns, table_path)
        logger.info(
            f"Finished {kind}/{name}: {len(rows)} rows in {time.perf_counter() - started:.1f}s"
        )
        return rows

    @override
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
        """Save mesh fields as legacy VTK."""
        fields_path = self.config.output_dir / kind / f"{name}.vtk"
        self.artifact_saver.save_fields(fields_path, mesh, rho=rho, p=p, u=u)

    def run_experiment(self) -> ResultRows:
        """Run the configured experiment and log the artifact summary."""
        kind = self.config.experiment
        logger.info(f"=== Running {kind} ===")
        logger.info(f"Configuration: {self.config.model_dump_json()}")

        runner = ExperimentRunner(self, self.config)
        rows = runner.collect(kind)

        logger.info(f"=== {kind} finished successfully! ===")
        self.artifact_saver.log_summary()
        return rows
