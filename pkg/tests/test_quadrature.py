from __future__ import annotations

import numpy as np
import pytest

from src.nonlocal_topopt.exceptions import InvalidArgumentError
from src.nonlocal_topopt.grid import build_grid
from src.nonlocal_topopt.kernel import KernelSpec
from src.nonlocal_topopt.quadrature import (
    QuadratureBudget,
    classify_pair,
    duffy_triangle_rule,
    gauss_jacobi_unit,
    gauss_legendre_unit,
    integrate_pair,
    pair_label,
    quadrature_convergence,
    representative_pairs,
    triangle_rule,
    union_node_ids,
)


@pytest.fixture(scope="module")
def mesh():
    return build_grid(20, 0.2)


@pytest.fixture(scope="module")
def spec():
    return KernelSpec.create(0.2, 1.0 / 3.0)


@pytest.fixture(scope="module")
def classes(mesh):
    return representative_pairs(mesh, 0.2)


@pytest.mark.parametrize("gamma", [-0.5, 0.0, 1.0 / 3.0, 1.4])
def test_gauss_jacobi_integrates_weighted_monomials(gamma):
    nodes, weights = gauss_jacobi_unit(6, gamma)
    for k in range(12):
        assert weights @ nodes**k == pytest.approx(1.0 / (gamma + k + 1.0), rel=1e-12)


def test_gauss_legendre_on_the_unit_interval():
    nodes, weights = gauss_legendre_unit(5)
    assert weights.sum() == pytest.approx(1.0)
    assert weights @ nodes**9 == pytest.approx(0.1)
    assert not nodes.flags.writeable


@pytest.mark.parametrize("rule", [duffy_triangle_rule(4), triangle_rule(3), triangle_rule(7)])
def test_triangle_rules_integrate_linear_functions(rule):
    points, weights = rule
    assert weights.sum() == pytest.approx(0.5)
    assert weights @ points[:, 0] == pytest.approx(1.0 / 6.0)
    assert weights @ points[:, 1] == pytest.approx(1.0 / 6.0)


def test_seven_point_rule_is_exact_for_degree_five():
    points, weights = triangle_rule(7)
    # ∫_S x^a y^b = a! b! / (a + b + 2)!
    assert weights @ (points[:, 0] ** 3 * points[:, 1] ** 2) == pytest.approx(
        6 * 2 / 5040, rel=1e-10
    )


def test_unknown_triangle_rule():
    with pytest.raises(InvalidArgumentError):
        triangle_rule(5)


def test_budget_validation():
    assert QuadratureBudget.uniform(4).points_for("disjoint-straddling") == 4
    assert QuadratureBudget().points_for("identical") == 15
    with pytest.raises(InvalidArgumentError):
        QuadratureBudget(identical=0)


def test_every_class_has_a_representative(classes):
    assert set(classes) == {"identical", "edge", "vertex", "disjoint-near", "disjoint-straddling"}
    for label, (first, second) in classes.items():
        assert pair_label(first, second, 0.2) == label
    first, second = classes["edge"]
    assert classify_pair(first, second) == 1
    assert len(union_node_ids(first, second)) == 4
    assert union_node_ids(first, second) == union_node_ids(second, first)


def test_blocks_are_symmetric_and_exchange_invariant(classes, spec):
    budget = QuadratureBudget.uniform(6)
    for first, second in classes.values():
        block = integrate_pair(first, second, spec, budget)
        swapped = integrate_pair(second, first, spec, budget)
        assert swapped.node_ids == block.node_ids
        assert np.array_equal(swapped.entries, block.entries)
        assert np.array_equal(block.entries, block.entries.T)


def test_blocks_annihilate_constants_and_are_semidefinite(classes, spec):
    budget = QuadratureBudget.uniform(6)
    for first, second in classes.values():
        entries = integrate_pair(first, second, spec, budget).entries
        scale = np.abs(entries).max()
        assert scale > 0.0
        assert np.abs(entries.sum(axis=1)).max() <= 1e-10 * scale
        assert np.linalg.eigvalsh(entries).min() >= -1e-10 * scale


def test_blocks_are_translation_invariant(mesh, spec):
    budget = QuadratureBudget.uniform(5)
    here = integrate_pair(
        mesh.triangle(mesh.triangle_index(3, 4, 0)),
        mesh.triangle(mesh.triangle_index(4, 4, 1)),
        spec,
        budget,
    )
    there = integrate_pair(
        mesh.triangle(mesh.triangle_index(9, 1, 0)),
        mesh.triangle(mesh.triangle_index(10, 1, 1)),
        spec,
        budget,
    )
    assert np.allclose(here.entries, there.entries, rtol=1e-12, atol=0.0)


def test_pairs_beyond_the_horizon(mesh, spec):
    budget = QuadratureBudget.uniform(4)
    first = mesh.triangle(mesh.triangle_index(2, 2, 0))
    # five cells apart: distance 0.25 lies in [δ, 2δ)
    zero = integrate_pair(first, mesh.triangle(mesh.triangle_index(8, 2, 1)), spec, budget)
    assert zero.k == -1
    assert not np.any(zero.entries)
    assert len(zero.node_ids) == 6
    with pytest.raises(InvalidArgumentError):
        integrate_pair(first, mesh.triangle(mesh.triangle_index(12, 2, 1)), spec, budget)


def test_quadrature_error_decreases(classes, spec):
    rows = quadrature_convergence(classes, spec, levels=[3, 10], reference_points=16)
    by_class: dict[str, list[float]] = {}
    for row in rows:
        by_class.setdefault(row.k, []).append(row.rel_error)
    assert set(by_class) == {"2", "1", "0", "-1near", "-1far"}
    for errors in by_class.values():
        assert errors[1] < errors[0]
    assert by_class["2"][1] < 1e-5
    assert rows[0].to_dict().keys() == {"k", "points_per_dim", "rel_error"}


@pytest.mark.slow
def test_every_class_converges_monotonically(classes, spec):
    rows = quadrature_convergence(classes, spec, levels=range(3, 16), reference_points=25)
    by_class: dict[str, list[float]] = {}
    for row in rows:
        by_class.setdefault(row.k, []).append(row.rel_error)
    assert set(by_class) == {"2", "1", "0", "-1near", "-1far"}
    for k, errors in by_class.items():
        assert len(errors) == 13
        for n, (before, after) in enumerate(zip(errors, errors[1:]), start=4):
            # round-off plateau
            assert after <= before or after <= 1e-12, f"k={k} grows at {n} points"
    assert by_class["2"][-1] <= 1e-10


@pytest.mark.slow
def test_identical_class_reaches_round_off_at_full_budget():
    spec = KernelSpec.create(0.1, 1.0 / 3.0)
    mesh = build_grid(20, 0.1)
    rows = quadrature_convergence(
        {"identical": representative_pairs(mesh, 0.1)["identical"]},
        spec,
        levels=[15],
        reference_points=25,
    )
    assert rows[0].rel_error <= 1e-10
