"""Shared fixtures."""
import numpy as np
import pytest

from MDL.dataset import Volume


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_volume(rng, depth=6, size=32, label=1, reps=(1, 2), name=""):
    """Random anisotropic volume with the usual metadata."""
    return Volume(rng.normal(size=(depth, size, size)), (0.45, 0.45), 3.0, label, reps, name)


@pytest.fixture
def volumes(rng):
    """Ten small volumes, four of label 0 and six of label 1."""
    labels = [0, 1, 0, 1, 1, 0, 1, 1, 0, 1]
    return [
        make_volume(rng, depth=4 + i % 3, label=y, name=f"v{i:02d}")
        for i, y in enumerate(labels)
    ]


@pytest.fixture
def volume_factory(rng):
    return lambda **kwargs: make_volume(rng, **kwargs)
