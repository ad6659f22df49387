"""Finite-difference oracle and the op sweep built on it."""
import numpy as np
import pytest

from MDL.model.aggregation import AGGREGATORS
from MDL.model.encoders import VARIANT_NAMES
from MDL.model.gradsuite import check_cells, check_ops
from MDL.model.losses import RECIPES
from MDL.tensor import (
    KinkError,
    Tensor,
    grad_check,
    relative_error,
    relu,
    sample_away_from_kinks,
)


def squared(x: Tensor) -> Tensor:
    return (x * x).sum()


def scaled_square(x: Tensor, factor: float) -> Tensor:
    """``x**2`` whose backward is off by ``factor``."""
    data = x.data
    return Tensor.from_op(data**2, (x,), lambda g: (factor * 2 * data * g,), "bad").sum()


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1.0, 1.0) == 0.0
    assert relative_error(1.0, -1.0) == pytest.approx(1.0)


def test_quadratic_is_exact():
    x = Tensor([1.0, 2.0], requires_grad=True)
    assert grad_check(squared, [x]) <= 1e-8
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_corrupted_backward_is_detected():
    x = Tensor([1.0, 2.0, -0.5], requires_grad=True)
    assert grad_check(lambda t: scaled_square(t, 1.0), [x]) <= 1e-8
    assert grad_check(lambda t: scaled_square(t, 1.01), [x]) > 1e-3


def test_non_scalar_function_is_rejected():
    with pytest.raises(ValueError, match="scalar"):
        grad_check(lambda t: t * 2.0, [Tensor([1.0, 2.0], requires_grad=True)])


def test_unknown_coord_mode():
    x = Tensor(np.ones(4), requires_grad=True)
    with pytest.raises(ValueError, match="coord_mode"):
        grad_check(squared, [x], n_coords=2, coord_mode="middle")


def test_kink_coordinates_are_skipped():
    x = Tensor([0.0, 1.0, -1.0], requires_grad=True)
    assert grad_check(lambda t: relu(t).sum(), [x], step=1e-4) <= 1e-8


@pytest.mark.parametrize("mode", ["random", "largest"])
def test_coordinate_subsets(rng, mode):
    x = Tensor(rng.normal(size=(5, 5)), requires_grad=True)
    assert grad_check(squared, [x], n_coords=4, coord_mode=mode) <= 1e-8


def test_sample_away_from_kinks(rng):
    inputs = sample_away_from_kinks(
        lambda g: [Tensor(g.normal(size=4), requires_grad=True)], lambda t: relu(t).sum()
    )
    assert np.min(np.abs(inputs[0].data)) > 1e-3


def test_sample_away_from_kinks_gives_up():
    with pytest.raises(KinkError):
        sample_away_from_kinks(
            lambda g: [Tensor(np.zeros(3), requires_grad=True)],
            lambda t: relu(t).sum(),
            max_tries=3,
        )


def test_every_op_passes(rng):
    table = check_ops(seeds=range(3))
    assert set(table["case"]) >= {"conv2d", "conv3d", "conv2plus1d", "batch_norm", "triplet_loss"}
    worst = table.groupby("case")["max_rel_error"].max()
    assert (worst <= 1e-5).all(), worst[worst > 1e-5]


@pytest.mark.slow
def test_every_op_passes_many_seeds():
    table = check_ops(seeds=range(20))
    assert table["max_rel_error"].max() <= 1e-5


@pytest.mark.slow
@pytest.mark.parametrize("arch", ["f-R2D", "f-MC3", "f-rMC5", "f-R(2+1)D"])
def test_whole_cells_pass(arch):
    table = check_cells(seeds=(0,), archs=[arch], n_coords=4)
    assert len(table) == 5 * 3
    assert table["max_rel_error"].max() <= 1e-5


@pytest.mark.slow
@pytest.mark.parametrize("recipe", RECIPES)
@pytest.mark.parametrize("aggregator", (None,) + AGGREGATORS)
@pytest.mark.parametrize("arch", VARIANT_NAMES)
def test_every_cell_over_twenty_seeds(arch, aggregator, recipe):
    table = check_cells(range(20), [arch], [aggregator], [recipe], n_coords=4)
    assert len(table) == 20
    assert table["max_rel_error"].max() <= 1e-5
