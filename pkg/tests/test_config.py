from __future__ import annotations

from pathlib import Path

import pytest
from pydantic import ValidationError

from src.experiment_harness.config import RunConfig, load_run_config, parse_key_values
from src.nonlocal_topopt.exceptions import InvalidArgumentError


def test_file_overrides_and_fixed_values_merge_in_order(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# ladder for the convergence study\n"
        "n_side = 8\n"
        "delta = 0.2   # horizon\n"
        "\n"
        "n_side_levels = 4, 8,16\n"
        "cache_dir = none\n",
        encoding="utf-8",
    )
    config = load_run_config(path, ["delta=0.3", "p=2"], experiment="grid-info", delta=None)
    assert config.experiment == "grid-info"
    assert config.n_side == 8
    assert config.delta == 0.3
    assert config.p == 2.0
    assert config.n_side_levels == (4, 8, 16)
    assert config.cache_dir is None


def test_fixed_values_win_over_overrides():
    config = load_run_config(None, ["output_dir=elsewhere"], output_dir=Path("here"))
    assert config.output_dir == Path("here")


def test_malformed_lines_are_rejected():
    with pytest.raises(InvalidArgumentError, match="--set:1"):
        parse_key_values("delta 0.2", source="--set")
    with pytest.raises(InvalidArgumentError):
        parse_key_values("= 3")
    assert parse_key_values("a = b = c") == {"a": "b = c"}


@pytest.mark.parametrize(
    "values",
    [
        {"s": 1.5},
        {"s": 0.0},
        {"p": 3.0},
        {"gamma": 1e-4},
        {"gamma": 1.0},
        {"delta": 0.0},
        {"n_side": 0},
        {"delta_levels": "0.1, -0.2"},
        {"source": "expression"},
        {"budget_min": 9, "budget_max": 4},
        {"unknown_key": 1},
        {"experiment": "bogus"},
    ],
)
def test_invalid_configurations(values):
    with pytest.raises(ValidationError):
        RunConfig.model_validate(values)


def test_local_experiment_accepts_zero_horizon():
    config = RunConfig(experiment="local-optimize", delta=0.0)
    assert config.delta == 0.0


def test_derived_objects():
    config = RunConfig(delta=0.2, s=0.5, budget_k2=9, budget_far=7, eta=0.1, max_outer_iter=5)
    spec = config.kernel_spec()
    assert spec.delta == 0.2
    assert spec.s == 0.5
    assert spec.beta == 3.0
    assert config.kernel_spec(0.05).delta == 0.05
    budget = config.budget()
    assert budget.identical == 9
    assert budget.disjoint_straddling == 7
    oc = config.oc_config()
    assert oc.eta == 0.1
    assert oc.max_outer_iter == 5
    assert config.design_bounds() == {"rho_min": 1e-3, "rho_max": 1.0, "p": 1.0}
