from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.nonlocal_topopt.exceptions import InvalidArgumentError
from src.nonlocal_topopt.grid import (
    ELEMENT_INTERIOR,
    NODE_FREE,
    PairKey,
    build_grid,
    enumerate_pairs,
    pair_classes,
    triangle_distance,
)


def test_counts_for_ten_cells_per_side():
    mesh = build_grid(10, 0.2)
    assert mesh.halo_layers == 2
    assert mesh.n_cells == 14
    assert mesh.n_nodes == 15 * 15
    assert mesh.n_triangles == 2 * 14 * 14
    assert mesh.n_interior == 200
    assert mesh.n_free == 81
    assert mesh.h == pytest.approx(math.sqrt(2.0) * 0.1)
    assert mesh.interior_area == pytest.approx(1.0)


def test_halo_absorbs_round_off():
    # 0.2 * 40 is 8.000000000000002 in floating point
    assert build_grid(40, 0.2).halo_layers == 8
    assert build_grid(10, 0.05).halo_layers == 1
    assert build_grid(10, 0.0).halo_layers == 0


def test_node_and_triangle_numbering():
    mesh = build_grid(3, 0.4)
    per_side = mesh.nodes_per_side
    halo = mesh.halo_layers
    i, j = 4, 1
    node = j * per_side + i
    assert mesh.nodes[node] == pytest.approx([(i - halo) / 3, (j - halo) / 3])

    lower = mesh.triangles[mesh.triangle_index(i, j, 0)]
    upper = mesh.triangles[mesh.triangle_index(i, j, 1)]
    assert list(lower) == [node, node + 1, node + per_side + 1]
    assert list(upper) == [node, node + per_side + 1, node + per_side]
    assert mesh.cell_of(np.int64(mesh.triangle_index(i, j, 1))) == (i, j, 1)


def test_every_triangle_has_the_same_positive_area():
    mesh = build_grid(6, 0.3)
    assert np.allclose(mesh.areas, 0.5 / 36)
    # counter-clockwise orientation
    p = mesh.nodes[mesh.triangles]
    signed = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
    signed -= (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    assert np.all(signed > 0.0)


def test_free_nodes_are_strictly_inside_the_unit_square():
    mesh = build_grid(7, 0.2)
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    eps = 1e-12
    strictly_inside = (x > eps) & (x < 1 - eps) & (y > eps) & (y < 1 - eps)
    assert np.array_equal(mesh.node_region == NODE_FREE, strictly_inside)
    assert np.array_equal(mesh.free_index[mesh.free_nodes], np.arange(mesh.n_free))
    assert np.all(mesh.free_index[~strictly_inside] == -1)


def test_interior_triangles_tile_the_unit_square():
    mesh = build_grid(7, 0.2)
    c = mesh.centroids
    inside = (c[:, 0] > 0) & (c[:, 0] < 1) & (c[:, 1] > 0) & (c[:, 1] < 1)
    assert np.array_equal(mesh.element_region == ELEMENT_INTERIOR, inside)


@pytest.mark.parametrize(
    ("n_side", "delta"), [(0, 0.1), (-3, 0.1), (True, 0.1), (4, -0.1), (4, math.nan)]
)
def test_invalid_grid_arguments(n_side, delta):
    with pytest.raises(InvalidArgumentError):
        build_grid(n_side, delta)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=12), st.sampled_from([0.0, 0.05, 0.1, 0.25]))
def test_locate_finds_the_triangle_of_each_centroid(n_side, delta):
    mesh = build_grid(n_side, delta)
    assert np.array_equal(mesh.locate(mesh.centroids), np.arange(mesh.n_triangles))


def test_locate_reports_points_outside():
    mesh = build_grid(4, 0.25)
    outside = np.array([[-0.5, 0.5], [0.5, 1.3], [2.0, 2.0]])
    assert np.all(mesh.locate(outside) == -1)


def test_triangle_distance():
    unit = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    assert triangle_distance(unit, unit) == 0.0
    assert triangle_distance(unit, unit + [3.0, 0.0]) == pytest.approx(2.0)
    # the upper triangle of the cell to the right touches at the edge x = 1
    right_upper = np.array([[1.0, 0.0], [2.0, 1.0], [1.0, 1.0]])
    assert triangle_distance(unit, right_upper) == 0.0
    # crossing edges count as touching
    crossed = np.array([[0.5, -0.5], [1.5, 0.5], [0.5, 0.5]])
    assert triangle_distance(unit, crossed) == 0.0


@pytest.mark.parametrize(
    ("key", "k"),
    [
        (PairKey(0, 0, 0, 0), 2),
        (PairKey(0, 0, 0, 1), 1),
        (PairKey(1, 0, 0, 1), 1),
        (PairKey(1, 1, 0, 0), 0),
        (PairKey(2, 0, 0, 0), -1),
    ],
)
def test_pair_key_shared_vertices(key, k):
    assert key.k == k


def test_canonical_keys_follow_triangle_order():
    assert PairKey(0, 0, 0, 1).is_canonical()
    assert not PairKey(0, 0, 1, 0).is_canonical()
    assert PairKey(-3, 1, 1, 0).is_canonical()
    assert not PairKey(2, -1, 0, 0).is_canonical()
    assert not PairKey(-1, 0, 0, 0).is_canonical()


def test_pair_classes_match_brute_force():
    n_side, delta = 8, 0.2
    mesh = build_grid(n_side, delta)
    cutoff = 2.0 * delta
    tri = mesh.nodes[mesh.triangles]
    centroids = mesh.centroids

    pairs = set()
    keys = set()
    for t1, t2 in itertools.combinations_with_replacement(range(mesh.n_triangles), 2):
        # circumradius of a cell is h_side / sqrt(2)
        if np.hypot(*(centroids[t1] - centroids[t2])) >= cutoff + 2 * mesh.h_side:
            continue
        if triangle_distance(tri[t1], tri[t2]) >= cutoff:
            continue
        pairs.add((t1, t2))
        i1, j1, tau1 = (int(v) for v in mesh.cell_of(np.int64(t1)))
        i2, j2, tau2 = (int(v) for v in mesh.cell_of(np.int64(t2)))
        keys.add(PairKey(i2 - i1, j2 - j1, tau1, tau2))

    assert set(pair_classes(mesh, delta)) == keys
    full = enumerate_pairs(mesh, delta, drop_inactive=False)
    assert len(full) == len(pairs)
    assert set(zip(full.t1.tolist(), full.t2.tolist(), strict=True)) == pairs


def test_pairs_are_grouped_by_class():
    mesh = build_grid(6, 0.2)
    pairs = enumerate_pairs(mesh, 0.2)
    assert np.all(pairs.t1 <= pairs.t2)
    assert pairs.class_ptr[-1] == len(pairs)
    for c, key in enumerate(pairs.classes):
        members = pairs.class_slice(c)
        assert np.all(pairs.class_index[members] == c)
        assert np.all(pairs.k[members] == key.k)
    t1, t2, k, key = pairs.as_tuples()[0]
    assert t1 <= t2
    assert k == key.k


def test_inactive_pairs_touch_no_free_node():
    mesh = build_grid(6, 0.2)
    full = enumerate_pairs(mesh, 0.2, drop_inactive=False)
    active = enumerate_pairs(mesh, 0.2)
    kept = set(zip(active.t1.tolist(), active.t2.tolist(), strict=True))
    free = mesh.node_region == NODE_FREE
    for t1, t2 in zip(full.t1.tolist(), full.t2.tolist(), strict=True):
        if (t1, t2) in kept:
            continue
        assert not free[mesh.triangles[t1]].any()
        assert not free[mesh.triangles[t2]].any()


def test_local_grid_has_no_pairs():
    mesh = build_grid(5, 0.0)
    assert pair_classes(mesh, 0.0) == []
    assert len(enumerate_pairs(mesh, 0.0)) == 0
