#!/usr/bin/env python3
"""
Tests for the synthetic surface and crack generator
"""

from dataclasses import replace

import numpy as np
import pytest

from pointcrack3d.errors import ConfigError, GeometryError
from pointcrack3d.synthgen import (
    MANIFEST_COLUMNS,
    CrackSpec,
    DatasetSpec,
    SurfaceSpec,
    carve_crack,
    crack_fraction,
    fractal_noise,
    generate_dataset,
    generate_surface,
    gradient_noise,
    polyline_distance,
    width_lookup,
)

FLAT = SurfaceSpec(extent=(1.0, 1.0), density=10_000, roughness=0.0, noise_sigma=0.001, seed=3,
                   tag="flat")


def straight_crack(width=0.05, darkening=0.5, keep=1.0, y=0.5, depth=0.02):
    path = [[0.2, y, 0.0], [0.5, y, 0.0], [0.8, y, 0.0]]
    return CrackSpec(path, [width] * 3, depth=depth, darkening=darkening, keep=keep)


def test_noise_is_bounded_and_seeded():
    grid = np.random.default_rng(0).uniform(-20, 20, (5000, 2))
    values = gradient_noise(grid[:, 0], grid[:, 1], np.random.default_rng(1))
    assert np.all(np.abs(values) <= 1.0 + 1e-9)
    assert values.std() > 0.1
    again = gradient_noise(grid[:, 0], grid[:, 1], np.random.default_rng(1))
    assert np.array_equal(values, again)

    layered = fractal_noise(grid, 4, np.random.default_rng(2))
    assert np.all(np.abs(layered) <= 1.0 + 1e-9)
    assert np.array_equal(layered, fractal_noise(grid, 4, np.random.default_rng(2)))


def test_surface_point_count_follows_density():
    cloud = generate_surface(replace(FLAT, roughness=0.05))
    assert abs(len(cloud) - 10_000) <= 500
    assert not cloud.label.any()
    assert cloud.tag == "flat"
    assert np.all(cloud.xyz[:, :2] >= 0) and np.all(cloud.xyz[:, :2] <= 1)


def test_flat_limit():
    z = generate_surface(FLAT).positions[:, 2]
    assert z.std() < 0.0015
    assert np.abs(z).max() < 0.006


def test_surface_is_deterministic():
    spec = replace(FLAT, roughness=0.05)
    assert generate_surface(spec) == generate_surface(spec)
    assert generate_surface(spec) != generate_surface(replace(spec, seed=4))


@pytest.mark.parametrize("changes", [
    {"extent": (0.0, 1.0)}, {"density": 0}, {"roughness": -0.1}, {"octaves": 0},
])
def test_invalid_surface_rejected(changes):
    with pytest.raises(ConfigError):
        generate_surface(replace(FLAT, **changes))


def test_polyline_distance_and_width():
    path = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    dist, width = polyline_distance(np.array([[0.5, 0.3], [2.0, 0.0], [0.25, 0.0]]), path,
                                    np.array([0.02, 0.06]))
    assert np.allclose(dist, [0.3, 1.0, 0.0])
    assert np.allclose(width, [0.04, 0.06, 0.03])


def test_crack_spec_validation():
    with pytest.raises(GeometryError):
        CrackSpec([[0, 0, 0]], [0.01], depth=0.01)
    with pytest.raises(GeometryError):
        CrackSpec([[0, 0, 0], [1, 0, 0]], [0.01, 0.0], depth=0.01)
    with pytest.raises(GeometryError):
        CrackSpec([[0, 0, 0], [0, 0, 1]], [0.01, 0.01], depth=0.01)
    with pytest.raises(GeometryError):
        CrackSpec([[0, 0, 0], [1, 0, 0]], [0.01, 0.01], depth=0.01, keep=0.0)
    crack = straight_crack()
    assert crack.length == pytest.approx(0.6)
    assert crack.describe()["max_width"] == 0.05


def test_constant_width_crack_stays_within_its_width():
    surface = generate_surface(FLAT)
    carved = carve_crack(surface, straight_crack(width=0.05), instance_id=1, seed=0)
    crack_y = carved.positions[carved.label == 1, 1]
    assert len(crack_y) > 100
    assert crack_y.max() - crack_y.min() <= 0.05 + 2 * FLAT.noise_sigma
    assert set(np.unique(carved.instance[carved.label == 1])) == {1}
    assert len(carved) == len(surface)

    centre = carved.label == 1
    assert carved.positions[centre, 2].min() < -0.015


def test_zero_darkening_keeps_colours():
    surface = generate_surface(FLAT)
    carved = carve_crack(surface, straight_crack(darkening=0.0), 1, seed=0)
    assert carved.label.any()
    assert np.array_equal(carved.rgb, surface.rgb)
    assert np.array_equal(carved.intensity, surface.intensity)

    darkened = carve_crack(surface, straight_crack(darkening=0.5), 1, seed=0)
    crack = darkened.label == 1
    expected = np.rint(surface.rgb[crack] * 0.5)
    assert np.array_equal(darkened.rgb[crack], expected.astype(np.uint8))
    assert np.array_equal(darkened.rgb[~crack], surface.rgb[~crack])


def test_thinning_removes_points():
    surface = generate_surface(FLAT)
    thinned = carve_crack(surface, straight_crack(keep=0.4), 1, seed=5)
    full = carve_crack(surface, straight_crack(keep=1.0), 1, seed=5)
    kept, inside = np.count_nonzero(thinned.label), np.count_nonzero(full.label)
    assert len(thinned) == len(surface) - (inside - kept)
    assert 0.25 * inside < kept < 0.55 * inside


def test_two_disjoint_cracks_get_two_ids():
    surface = generate_surface(FLAT)
    carved = carve_crack(surface, straight_crack(y=0.3), 1, seed=1)
    carved = carve_crack(carved, straight_crack(y=0.7), 2, seed=2)
    assert carved.crack_instances.tolist() == [1, 2]
    assert not np.any((carved.label == 0) & (carved.instance != 0))


def test_footprint_outside_surface_rejected():
    surface = generate_surface(FLAT)
    with pytest.raises(GeometryError):
        carve_crack(surface, straight_crack(y=0.995, width=0.05), 1)
    with pytest.raises(GeometryError):
        carve_crack(surface, straight_crack(), 0)


def small_dataset(**changes):
    values = dict(surfaces=5, cracks_per_surface=6,
                  surface=SurfaceSpec(extent=(3.0, 3.0), density=2000), seed=11)
    values.update(changes)
    return DatasetSpec(**values)


def test_dataset_manifest():
    spec = small_dataset()
    clouds, manifest = generate_dataset(spec)
    assert len(clouds) == 5
    assert [c.tag for c in clouds] == [f"surface{s:02d}" for s in range(5)]
    assert list(manifest.columns) == MANIFEST_COLUMNS
    assert len(manifest) == 30
    assert manifest["crack_id"].tolist() == list(range(1, 31))

    assert (manifest["min_width"] >= spec.min_width - 1e-12).all()
    assert (manifest["max_width"] <= spec.max_width + 1e-12).all()
    assert np.allclose(np.sort(manifest["max_width"]),
                       np.geomspace(spec.min_width, spec.max_width, 30))
    assert (manifest["length"] >= spec.crack_length[0] - 1e-9).all()

    for cloud in clouds:
        rows = manifest[manifest["tag"] == cloud.tag]
        assert rows["instance_id"].tolist() == list(range(1, 7))
        assert set(cloud.crack_instances.tolist()) <= set(rows["instance_id"])
        for row in rows.itertuples():
            assert row.point_count == np.count_nonzero(cloud.instance == row.instance_id)

    lookup = width_lookup(manifest)
    assert set(lookup) == {c.tag for c in clouds}
    assert lookup["surface00"][1] == manifest.loc[0, "max_width"]


def test_dataset_is_deterministic():
    first_clouds, first = generate_dataset(small_dataset(surfaces=2))
    second_clouds, second = generate_dataset(small_dataset(surfaces=2))
    assert first.equals(second)
    assert all(a == b for a, b in zip(first_clouds, second_clouds))


def test_crack_fraction_is_controllable():
    sparse_clouds, _ = generate_dataset(small_dataset(surfaces=1, cracks_per_surface=2,
                                                      max_width=0.01, min_width=0.005))
    dense_clouds, _ = generate_dataset(small_dataset(surfaces=1))
    sparse = crack_fraction(sparse_clouds)
    assert 0 < sparse < 0.005
    assert crack_fraction(dense_clouds) > sparse
    assert crack_fraction([]) == 0.0


def test_dataset_spec_violations():
    assert small_dataset().violations() == []
    assert small_dataset(min_width=0.2, max_width=0.1).violations()
    crowded = small_dataset(cracks_per_surface=40)
    with pytest.raises(ConfigError):
        generate_dataset(crowded)
