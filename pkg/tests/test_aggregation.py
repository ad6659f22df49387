"""Depth aggregators and the volume head."""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from MDL.model.aggregation import (
    AGGREGATORS,
    AggregatorKind,
    VolumeHead,
    aggregate,
    aggregator_kind,
    attention_weights,
    bilinear_logit_scale,
    output_dim,
    volume_head,
)
from MDL.model.encoders import FeatureMatrix
from MDL.tensor import Linear, Tensor, grad_check


def features(array):
    return Tensor(np.asarray(array, dtype=float))


def test_tokens_parse():
    assert aggregator_kind("ATT") == AggregatorKind.ATT
    assert aggregator_kind(AggregatorKind.MXP) == AggregatorKind.MXP
    with pytest.raises(ValueError, match="avp, mxp, att, bilinear"):
        aggregator_kind("sum")


def test_output_dims():
    assert output_dim("bilinear") == 65_536
    assert output_dim("avp") == output_dim("mxp") == output_dim("att") == 256


def test_attention_example():
    out = aggregate(features([[[0.0, np.log(2.0)]]]), "att")
    assert_allclose(out.data, [[2.0 / 3.0 * np.log(2.0)]])
    assert out.item() == pytest.approx(0.4621, abs=1e-4)
    weights = attention_weights(features([[[0.0, np.log(2.0)]]]))
    assert_allclose(weights.data, [[[1.0 / 3.0, 2.0 / 3.0]]])


def test_bilinear_example():
    out = aggregate(features([[[1.0], [0.0]]]), "bilinear")
    assert_allclose(out.data, [[1.0, 0.0, 0.0, 0.0]])


@pytest.mark.parametrize("kind", ["avp", "mxp", "att"])
def test_constant_depth_returns_the_column(rng, kind):
    column = rng.normal(size=(2, 5, 1))
    out = aggregate(features(np.repeat(column, 4, axis=2)), kind)
    assert_allclose(out.data, column[..., 0], atol=1e-12)


@pytest.mark.parametrize("kind", ["avp", "mxp", "att"])
def test_single_slice(rng, kind):
    f = rng.normal(size=(3, 6, 1))
    assert_allclose(aggregate(features(f), kind).data, f[..., 0])


def test_feature_matrix_input(rng):
    values = Tensor(rng.normal(size=(1, 256, 3)))
    out = aggregate(FeatureMatrix(values, 3), "avp")
    assert_allclose(out.data, values.data.mean(axis=-1))


def test_attention_weights_are_a_distribution(rng):
    f = features(rng.normal(size=(4, 8, 6)) * 10)
    weights = attention_weights(f).data
    assert np.all(weights > 0)
    assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-12)
    shifted = attention_weights(features(f.data + rng.normal(size=(4, 8, 1)))).data
    assert_allclose(shifted, weights, atol=1e-12)


@pytest.mark.parametrize("kind", ["avp", "att"])
def test_bounded_by_depth_extremes(rng, kind):
    f = rng.normal(size=(3, 7, 5))
    out = aggregate(features(f), kind).data
    assert np.all(out >= f.min(axis=-1) - 1e-12)
    assert np.all(out <= f.max(axis=-1) + 1e-12)


def test_bilinear_unit_norm_and_symmetry(rng):
    f = rng.normal(size=(3, 6, 4))
    out = aggregate(features(f), "bilinear").data
    assert_allclose(np.linalg.norm(out, axis=-1), 1.0, atol=1e-9)
    matrices = out.reshape(3, 6, 6)
    assert_allclose(matrices, matrices.transpose(0, 2, 1))


def test_bilinear_zero_features_stay_zero():
    out = aggregate(features(np.zeros((1, 3, 2))), "bilinear")
    assert_allclose(out.data, 0.0)


@pytest.mark.parametrize("kind", AGGREGATORS)
def test_slice_permutation_invariance(rng, kind):
    f = rng.normal(size=(2, 5, 6))
    perm = rng.permutation(6)
    a = aggregate(features(f), kind).data
    b = aggregate(features(f[..., perm]), kind).data
    assert_allclose(a, b, atol=1e-12)


def test_max_pool_ties_go_to_the_first_slice():
    x = Tensor(np.array([[[1.0, 3.0, 3.0]]]), requires_grad=True)
    aggregate(x, "mxp").sum().backward()
    assert_allclose(x.grad, [[[0.0, 1.0, 0.0]]])


def test_empty_depth_rejected():
    with pytest.raises(ValueError):
        aggregate(features(np.zeros((1, 3, 0))), "avp")


def test_head_sizes(rng):
    assert VolumeHead("bilinear", rng).num_parameters() == 65_537
    for kind in ("avp", "mxp", "att"):
        assert VolumeHead(kind, rng).num_parameters() == 257


def test_zero_input_gives_bias(rng):
    head = VolumeHead("att", rng)
    out = head(features(np.zeros((3, 256))))
    assert_allclose(out.data, np.full((3, 1), head.fc.bias.data[0]))


def test_head_rejects_wrong_dim(rng):
    with pytest.raises(ValueError, match="bilinear"):
        volume_head(features(np.zeros((1, 256))), "bilinear", Linear(256, 1, rng))
    with pytest.raises(ValueError):
        VolumeHead("avp", rng)(features(np.zeros((1, 65_536))))


@pytest.mark.parametrize("kind", AGGREGATORS)
def test_aggregate_then_head_gradients(rng, kind):
    head = VolumeHead(kind, rng, channels=4)
    x = rng.normal(size=(2, 4, 3))
    x = np.sign(x) * (np.abs(x) + 0.2)
    inputs = [Tensor(x, requires_grad=True), head.fc.weight, head.fc.bias]
    assert grad_check(lambda v, w, b: head(aggregate(v, kind)).sum(), inputs, 1e-5) <= 1e-5


def test_bilinear_head_scales_the_unit_feature(rng):
    head = VolumeHead("bilinear", rng, channels=4)
    pooled = aggregate(features(rng.normal(size=(3, 4, 5))), "bilinear")
    expected = pooled.data @ head.fc.weight.data.T * 2.0 + head.fc.bias.data
    assert bilinear_logit_scale(4) == 2.0
    assert_allclose(head(pooled).data, expected)
