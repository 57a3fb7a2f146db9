from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import meshio
import numpy as np
import pytest
from mashumaro import DataClassDictMixin

from src.experiment_harness.artifact_saver import ArtifactSaver, format_table
from src.experiment_harness.config import RunConfig
from src.experiment_harness.experiments import (
    CrossCheckRow,
    ExperimentRunner,
    best_designs,
    ramp_design,
    resample_design,
)
from src.experiment_harness.main import main
from src.experiment_harness.orchestrator import ExperimentOrchestrator
from src.nonlocal_topopt.assembly import initial_design
from src.nonlocal_topopt.exceptions import InvalidArgumentError
from src.nonlocal_topopt.grid import build_grid
from src.nonlocal_topopt.vtk_export import to_meshio, write_vtk

SMALL_RUN = {
    "n_side": 4,
    "delta": 0.3,
    "budget_k2": 3,
    "budget_k1": 3,
    "budget_k0": 3,
    "budget_near": 3,
    "budget_far": 3,
    "max_outer_iter": 5,
    "cache_dir": None,
}


def small_overrides(**extra):
    values = {**SMALL_RUN, "cache_dir": "none", **extra}
    overrides = []
    for key, value in values.items():
        overrides += ["--set", f"{key}={value}"]
    return overrides


def read_csv(path):
    with path.open(encoding="utf-8", newline="") as handle:
        return list(csv.DictReader(handle))


@dataclass(frozen=True)
class PointRow(DataClassDictMixin):
    name: str
    value: float


def test_format_table():
    text = format_table([PointRow("a", 0.1), PointRow("b", 1e-12)], ("name", "value"))
    assert text == "name,value\na,0.1\nb,1e-12\n"
    with pytest.raises(InvalidArgumentError):
        format_table([PointRow("a", 1.0)], ("name",))


def test_saver_tracks_new_and_changed_tables(tmp_path):
    path = tmp_path / "kind" / "table.csv"
    first = ArtifactSaver(tmp_path)
    first.save_table([PointRow("a", 1.0)], ("name", "value"), path)
    assert first.diff_tracker.new_artifacts == ["kind/table.csv"]

    second = ArtifactSaver(tmp_path)
    second.save_table([PointRow("a", 1.0)], ("name", "value"), path)
    assert second.diff_tracker.new_artifacts == []
    assert second.diff_tracker.changed_artifacts == []

    second.save_table([PointRow("a", 2.0)], ("name", "value"), path)
    assert second.diff_tracker.changed_artifacts == ["kind/table.csv"]
    assert path.read_text(encoding="utf-8").endswith("a,2.0\n")


def test_changed_tables_are_logged_as_a_diff(tmp_path, caplog):
    path = tmp_path / "table.csv"
    saver = ArtifactSaver(tmp_path)
    saver.save_table([PointRow("a", 1.0)], ("name", "value"), path)
    with caplog.at_level(logging.INFO):
        saver.save_table([PointRow("a", 3.0)], ("name", "value"), path)
        saver.log_summary()
    assert "ARTIFACT CHANGED: table.csv" in caplog.text
    assert "E   +a,3.0" in caplog.text
    assert "CHANGED ARTIFACTS (1):" in caplog.text


def test_vtk_export(tmp_path):
    mesh = build_grid(3, 0.3)
    rho = np.linspace(0.1, 1.0, mesh.n_triangles)
    u = mesh.nodes[:, 0].copy()
    converted = to_meshio(mesh, rho=rho, p=2.0, u=u)
    assert converted.points.shape == (mesh.n_nodes, 3)
    assert np.allclose(converted.cell_data["kappa_loc"][0], rho**2)
    assert set(np.unique(converted.cell_data["region"][0])) <= {0, 1}

    path = write_vtk(tmp_path / "fields.vtk", mesh, rho=rho, u=u)
    loaded = meshio.read(path)
    assert loaded.points.shape[0] == mesh.n_nodes
    assert np.allclose(loaded.point_data["u"], u)

    with pytest.raises(InvalidArgumentError):
        to_meshio(mesh, rho=rho[:-1])
    with pytest.raises(InvalidArgumentError):
        to_meshio(mesh, u=u[:-1])


def test_ramp_design_meets_the_volume_budget():
    mesh = build_grid(6, 0.2)
    design = ramp_design(mesh, 0.4, seed=3)
    assert design.volume() == pytest.approx(0.4 * mesh.interior_area, rel=1e-10)
    assert np.all(design.rho >= design.rho_min)
    assert np.all(design.rho <= design.rho_max)
    assert np.array_equal(design.rho, ramp_design(mesh, 0.4, seed=3).rho)


def test_resample_design_between_horizons():
    source = build_grid(5, 0.2)
    target = build_grid(5, 0.4)
    design = ramp_design(source, 0.4, seed=1)
    moved = resample_design(design, source, target)
    assert moved.rho.shape == (target.n_triangles,)
    # the wider collar reaches outside the source mesh
    assert np.any(moved.rho == design.rho_min)
    inside = np.flatnonzero(target.interior_mask)
    centroid = target.centroids[inside[0]]
    assert moved.rho[inside[0]] == design.rho[source.locate(centroid[None, :])[0]]


def test_grid_info_command(tmp_path):
    out = tmp_path / "out"
    code = main(["grid-info", "--output-dir", str(out), "--set", "n_side=4", "--set", "delta=0.3"])
    assert code == 0
    rows = read_csv(out / "grid-info" / "grid_info.csv")
    assert len(rows) == 1
    assert rows[0]["halo_layers"] == "2"
    assert rows[0]["n_triangles"] == "128"
    assert rows[0]["n_free"] == "9"
    assert (out / "grid-info" / "mesh_n4.vtk").exists()
    assert (out / "run.log").read_text(encoding="utf-8")


def test_config_file_is_read(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("n_side = 2\ndelta = 0.5\n", encoding="utf-8")
    out = tmp_path / "out"
    assert main(["grid-info", "--config", str(config), "--output-dir", str(out)]) == 0
    rows = read_csv(out / "grid-info" / "grid_info.csv")
    assert rows[0]["n_side"] == "2"
    assert rows[0]["delta"] == "0.5"


@pytest.mark.parametrize(
    "overrides",
    [["--set", "s=1.5"], ["--set", "delta"], ["--set", "gamma=2"], ["--set", "colour=red"]],
)
def test_configuration_errors_exit_with_code_two(tmp_path, capsys, overrides):
    code = main(["optimize", "--output-dir", str(tmp_path), *overrides])
    assert code == 2
    lines = capsys.readouterr().err.strip().splitlines()
    assert lines[-1].startswith("error-class=config-error message=")


def test_missing_config_file_is_a_configuration_error(tmp_path, capsys):
    code = main(["grid-info", "--config", str(tmp_path / "missing.cfg")])
    assert code == 2
    assert "error-class=config-error" in capsys.readouterr().err


def test_runtime_failure_exits_with_code_one(tmp_path, capsys):
    overrides = small_overrides(cg_max_iter=1, cg_tol=1e-15)
    code = main(["optimize", "--output-dir", str(tmp_path), *overrides])
    assert code == 1
    assert "error-class=optimization-aborted message=" in capsys.readouterr().err


def test_optimize_run_writes_its_artifacts(tmp_path):
    config = RunConfig(experiment="optimize", output_dir=tmp_path, **SMALL_RUN)
    rows = ExperimentOrchestrator(config).run_experiment()
    assert [row.delta for row in rows] == [0.3, 0.0]

    run_dir = tmp_path / "optimize"
    summary = read_csv(run_dir / "summary.csv")
    assert list(summary[0]) == ["delta", "h", "J_star", "N"]
    assert len(summary) == 2
    for row in summary:
        assert float(row["J_star"]) > 0.0
        assert 1 <= int(row["N"]) <= 5
    history = read_csv(run_dir / "history_delta0.3.csv")
    assert list(history[0]) == ["iter", "J", "design_change", "lambda", "volume"]
    assert len(history) == int(summary[0]["N"])
    for name in ("final_delta0.3.vtk", "history_delta0.csv", "final_delta0.vtk"):
        assert (run_dir / name).exists()

    rerun = ExperimentOrchestrator(config)
    rerun.run_experiment()
    assert rerun.artifact_saver.diff_tracker.new_artifacts == []


def test_snapshots_are_written_every_n_iterations(tmp_path):
    config = RunConfig(
        experiment="local-optimize",
        output_dir=tmp_path,
        **{**SMALL_RUN, "delta": 0.0, "snapshot_every": 2},
    )
    rows = ExperimentOrchestrator(config).run_experiment()
    assert rows[0].delta == 0.0
    snapshots = sorted(path.name for path in (tmp_path / "local-optimize").glob("*_iter*.vtk"))
    expected = [f"delta0_iter{i:04d}.vtk" for i in range(2, rows[0].N + 1, 2)]
    assert snapshots == expected


def test_quad_convergence_covers_every_class(tmp_path):
    config = RunConfig(
        experiment="quad-convergence",
        output_dir=tmp_path,
        **{**SMALL_RUN, "budget_min": 2, "budget_max": 4},
    )
    rows = ExperimentOrchestrator(config).run_experiment()
    assert {row.k for row in rows} == {"2", "1", "0", "-1near", "-1far"}
    assert len(rows) == 15
    assert all(row.rel_error >= 0.0 for row in rows)


def test_runner_hands_tables_to_the_processor(processor):
    config = RunConfig(experiment="delta-convergence", delta_levels=(0.3,), n_side_levels=(4,))
    runner = ExperimentRunner(processor, config.model_copy(update=SMALL_RUN))
    rows = runner.collect("delta-convergence")
    assert [row.delta for row in rows] == [0.3, 0.0]
    assert all(row.l2_error > 0.0 for row in rows)
    columns, stored = processor.tables["delta-convergence/delta_convergence"]
    assert columns == ("delta", "n_side", "h", "l2_error")
    assert stored is rows


def test_problems_are_built_once_per_run(processor):
    runner = ExperimentRunner(processor, RunConfig(**SMALL_RUN))
    assert runner.problem(4, 0.3) is runner.problem(4, 0.3)


def test_mms_convergence_small_ladder(processor):
    config = RunConfig(
        experiment="mms-convergence", **{**SMALL_RUN, "delta": 0.25}, mms_tol=1e-6
    ).model_copy(update={"n_side_levels": (4, 8)})
    rows = ExperimentRunner(processor, config).collect("mms-convergence")
    assert [row.n_side for row in rows] == [4, 8]
    assert all(np.isfinite(row.rel_l2_error) and row.rel_l2_error > 0.0 for row in rows)


def test_cross_check_diagonal_matches_the_optimized_compliance(processor):
    config = RunConfig(
        experiment="cross-check", **{**SMALL_RUN, "max_outer_iter": 3}
    ).model_copy(update={"delta_levels": (0.3, 0.4)})
    runner = ExperimentRunner(processor, config)
    rows = runner.collect("cross-check")
    assert [(row.design_delta, row.eval_delta) for row in rows] == [
        (0.3, 0.3),
        (0.3, 0.4),
        (0.4, 0.3),
        (0.4, 0.4),
    ]
    assert "cross-check/history_delta0.3" in processor.tables
    assert "cross-check/final_delta0.4" in processor.fields

    optimized = runner.optimize_nonlocal(0.3, kind="cross-check")
    diagonal = next(row for row in rows if row.design_delta == row.eval_delta == 0.3)
    assert diagonal.compliance == pytest.approx(optimized.history.final_compliance, rel=1e-9)


def test_start_design_kinds(processor):
    mesh = build_grid(4, 0.3)
    uniform = ExperimentRunner(processor, RunConfig(**SMALL_RUN)).start_design(mesh)
    assert np.array_equal(uniform.rho, initial_design(mesh, 0.4).rho)
    ramp_config = RunConfig(**SMALL_RUN, initial_design="ramp", seed=7)
    ramp = ExperimentRunner(processor, ramp_config).start_design(mesh)
    assert not np.allclose(ramp.rho, ramp.rho[0])
    assert ramp.volume() == pytest.approx(uniform.volume(), rel=1e-10)


def test_cross_check_compares_designs_under_each_horizon(caplog):
    # every design is cheapest under the small horizon; under 0.2 the 0.1 design wins
    rows = [
        CrossCheckRow(0.2, 0.2, 1.2),
        CrossCheckRow(0.2, 0.1, 0.5),
        CrossCheckRow(0.1, 0.2, 1.0),
        CrossCheckRow(0.1, 0.1, 0.4),
    ]
    best = best_designs(rows)
    assert best[0.1].design_delta == 0.1
    assert best[0.2].design_delta == 0.1
    with caplog.at_level(logging.WARNING):
        ExperimentRunner._check_diagonal(rows)
    warnings = [record.getMessage() for record in caplog.records]
    assert len(warnings) == 1
    assert "Under delta=0.2 the best design is the one optimized for delta=0.1" in warnings[0]
