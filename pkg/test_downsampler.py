#!/usr/bin/env python3
"""
Tests for crack-preserving voxel grid downsampling
"""

import numpy as np
import pytest
from scipy.stats import binomtest

from pointcrack3d.downsampler import (
    CellGroup,
    cell_partition,
    centroid_nearest,
    downsample,
    downsample_groups,
    has_occupied_neighbour,
    integer_cube_root,
)
from pointcrack3d.errors import InsufficientDistinctPointsError, InsufficientPointsError


@pytest.mark.parametrize("n, expected", [
    (1, 1), (7, 1), (8, 2), (26, 2), (27, 3), (2047, 12), (2048, 12), (2197, 13),
])
def test_integer_cube_root(n, expected):
    assert integer_cube_root(n) == expected


def test_cell_partition_covers_every_point(rng):
    positions = rng.uniform(0, 1, (500, 3))
    ids = np.arange(500)
    groups = cell_partition(positions, ids, 4)
    members = np.sort(np.concatenate([g.member_ids for g in groups]))
    assert np.array_equal(members, ids)
    assert all(np.all(np.diff(g.member_ids) > 0) for g in groups)


def test_algorithm_invariants_on_random_voxels():
    """Cardinality, subset, determinism and centroid-nearest choice on many voxels"""
    master = np.random.default_rng(7)
    for trial in range(1000):
        count = int(master.integers(20, 160))
        n = int(master.integers(8, 20))
        positions = master.uniform(0, 1, (count, 3))
        ids = np.sort(master.choice(10 * count, size=count, replace=False))
        seed = int(master.integers(2**31))

        chosen = downsample(positions, ids, n, seed=seed)
        assert len(chosen) == n
        assert np.all(np.isin(chosen, ids))
        assert np.array_equal(chosen, downsample(positions, ids, n, seed=seed))

        groups = downsample_groups(positions, ids, n, seed=seed)
        assert len(groups) == n
        for group in groups:
            pick = centroid_nearest(positions, ids, group)
            rows = np.searchsorted(ids, group.member_ids)
            centroid = positions[rows].mean(axis=0)
            dist2 = np.sum((positions[rows] - centroid) ** 2, axis=1)
            assert np.sum((positions[np.searchsorted(ids, pick)] - centroid) ** 2) == dist2.min()
        assert np.array_equal(np.sort([centroid_nearest(positions, ids, g) for g in groups]),
                              chosen)


def test_exact_size_voxel_keeps_everything(rng):
    positions = rng.uniform(0, 1, (27, 3))
    assert np.array_equal(downsample(positions, np.arange(27), 27, seed=1), np.arange(27))


def test_input_order_does_not_matter(rng):
    positions = rng.uniform(0, 1, (100, 3))
    ids = np.arange(100)
    order = rng.permutation(100)
    assert np.array_equal(downsample(positions, ids, 16, seed=3),
                          downsample(positions[order], ids[order], 16, seed=3))


def test_too_few_points():
    with pytest.raises(InsufficientPointsError):
        downsample(np.zeros((5, 3)), np.arange(5), 8)


def test_too_few_distinct_points(rng):
    positions = np.repeat(rng.uniform(0, 1, (4, 3)), 5, axis=0)
    with pytest.raises(InsufficientDistinctPointsError):
        downsample(positions, np.arange(20), 8)


def sparse_minority_voxel(seed, dense=1980, sparse=20):
    """Thin dense slab plus a sparse cluster floating above it"""
    rng = np.random.default_rng(seed)
    slab = np.column_stack([rng.uniform(0, 1, (dense, 2)), rng.uniform(0, 0.02, dense)])
    cloud = np.column_stack([rng.uniform(0, 1, (sparse, 2)), rng.uniform(0.2, 0.5, sparse)])
    return np.vstack([slab, cloud]), np.arange(dense, dense + sparse)


def test_sparse_points_preserved_better_than_random_sampling():
    n = 256
    grid_rates, random_rates = [], []
    for seed in range(100):
        positions, minority = sparse_minority_voxel(seed)
        ids = np.arange(len(positions))
        kept = downsample(positions, ids, n, seed=seed)
        grid_rates.append(np.isin(minority, kept).mean())
        uniform = np.random.default_rng(10_000 + seed).choice(len(positions), n, replace=False)
        random_rates.append(np.isin(minority, uniform).mean())

    grid_rates, random_rates = np.array(grid_rates), np.array(random_rates)
    assert grid_rates.mean() >= 2 * random_rates.mean()
    wins = int(np.sum(grid_rates > random_rates))
    ties = int(np.sum(grid_rates == random_rates))
    assert binomtest(wins, len(grid_rates) - ties, 0.5).pvalue < 0.01


def blob_with_outliers(seed):
    """1000-point dense blob at the origin plus 10 points far from it and from each other"""
    rng = np.random.default_rng(seed)
    blob = rng.normal(0.0, 0.05, (1000, 3))
    corners = np.array([[x, y, z] for x in (-2, 2) for y in (-2, 2) for z in (-2, 2)], float)
    outliers = np.vstack([corners, [[2.0, 0.0, 0.0], [-2.0, 0.0, 0.0]]])
    return np.vstack([blob, outliers]), np.arange(1000, 1010)


def test_isolated_points_always_survive():
    for seed in range(50):
        positions, isolated = blob_with_outliers(seed)
        kept = downsample(positions, np.arange(len(positions)), 100, seed=seed)
        assert len(kept) == 100
        assert np.all(np.isin(isolated, kept)), seed


def test_occupied_neighbour_flags():
    groups = [CellGroup((0, 0, 0), np.array([0])), CellGroup((1, 1, 1), np.array([1])),
              CellGroup((5, 5, 5), np.array([2])), CellGroup((5, 7, 5), np.array([3]))]
    assert has_occupied_neighbour(groups).tolist() == [True, True, False, False]
