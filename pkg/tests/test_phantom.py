"""Phantom generator: labels, geometry and determinism."""
import numpy as np
import pytest

from MDL.dataset import PhantomConfig, generate_phantom_dataset, phantom_geometries
from MDL.dataset.phantom import MIN_ANISOTROPY, blob_section_radius


def test_easy_phantoms_are_separated_by_penetration():
    config = PhantomConfig(n=200, difficulty=0.0, seed=5, size=64)
    geometries = phantom_geometries(config)
    for g in geometries:
        assert (g.penetration > 0) == (g.label == 1)
        assert abs(g.penetration) >= 0.06 * config.size - 1e-12


def test_hard_phantoms_still_follow_the_label_rule():
    for g in phantom_geometries(PhantomConfig(n=100, difficulty=1.0, seed=1)):
        assert (g.penetration > 0) == (g.label == 1)


@pytest.mark.parametrize("balance", [0.3, 0.7])
def test_label_marginal(balance):
    labels = [g.label for g in phantom_geometries(PhantomConfig(n=1000, class_balance=balance))]
    assert abs(np.mean(labels) - balance) <= 0.02


def test_same_seed_gives_identical_bytes():
    a = generate_phantom_dataset(n=4, seed=3, size=16)
    b = generate_phantom_dataset(n=4, seed=3, size=16)
    for x, y in zip(a, b):
        assert x.voxels.tobytes() == y.voxels.tobytes()
        assert x.meta() == y.meta()
    c = generate_phantom_dataset(n=4, seed=4, size=16)
    assert [x.meta() for x in a] != [z.meta() for z in c]


def test_volume_geometry():
    volumes = generate_phantom_dataset(n=12, seed=2, size=32)
    for v in volumes:
        depth, height, width = v.voxels.shape
        assert 8 <= depth <= 16
        assert height == width == 32
        assert v.slice_thickness / v.pixel_spacing[0] >= MIN_ANISOTROPY
        assert 1 <= len(v.representative_slices) <= 3
        assert np.all(np.isfinite(v.voxels))
    assert len({v.name for v in volumes}) == 12


def test_thickness_bound_follows_spacing():
    geometries = phantom_geometries(PhantomConfig(n=2000, seed=4, size=16))
    ratios = np.array([g.thickness / g.spacing for g in geometries])
    assert ratios.min() >= MIN_ANISOTROPY - 1e-12
    assert any(g.thickness < MIN_ANISOTROPY * 0.5 for g in geometries)


def test_representative_slices_have_the_widest_blob():
    config = PhantomConfig(n=20, seed=8, size=32)
    volumes = generate_phantom_dataset(n=20, seed=8, size=32, class_balance=0.7, difficulty=0.3)
    for g, v in zip(phantom_geometries(config), volumes):
        sections = blob_section_radius(g)
        chosen = sections[list(v.representative_slices)]
        assert chosen.min() > 0
        assert chosen.min() >= np.sort(sections)[-len(chosen)]


@pytest.mark.parametrize(
    "kwargs",
    [{"difficulty": 1.5}, {"class_balance": -0.1}, {"size": 8}, {"depth_min": 2}, {"n": 0}],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        PhantomConfig(**kwargs)
