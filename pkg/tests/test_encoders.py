"""Encoder variants: plans, exact parameter counts and slice behaviour."""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from MDL.model.encoders import (
    FEATURE_DIM,
    VARIANT_NAMES,
    FeatureMatrix,
    Kind,
    build_variant,
    check_input,
    choose_mid_channels,
    count_params,
    describe,
    describe_table,
    encode,
    plan_for,
    slice_head,
)
from MDL.tensor import Linear, Parameter, Tensor, no_grad

EXPECTED_PARAMS = {
    "f-R2D": 2_796_001,
    "f-R3D": 8_291_873,
    "f-R(2+1)D": 8_294_563,
    "f-MC2": 2_799_137,
    "f-MC3": 2_872_865,
    "f-MC4": 3_130_913,
    "f-MC5": 4_163_105,
    "f-rMC2": 8_288_737,
    "f-rMC3": 8_215_009,
    "f-rMC4": 7_956_961,
    "f-rMC5": 6_924_769,
}


def features_of(variant, x):
    variant.eval()
    with no_grad():
        return encode(variant, Tensor(x)).values.data


@pytest.mark.parametrize("name", VARIANT_NAMES)
def test_parameter_counts(name):
    assert count_params(build_variant(name)) == EXPECTED_PARAMS[name]


def test_every_variant_has_an_expected_count():
    assert set(VARIANT_NAMES) == set(EXPECTED_PARAMS)


def test_count_differences():
    r2d = EXPECTED_PARAMS["f-R2D"]
    assert EXPECTED_PARAMS["f-rMC5"] - r2d == 4_128_768
    assert EXPECTED_PARAMS["f-R3D"] - r2d == 5_492_736 + 3_136


def test_plans():
    two, three = Kind.TWO_D, Kind.THREE_D
    assert plan_for("f-rMC5").layer_kinds == (two, two, two, two, three)
    assert plan_for("f-MC2").layer_kinds == (three, two, two, two, two)
    assert set(plan_for("f-R2D").layer_kinds) == {two}
    assert set(plan_for("f-R3D").layer_kinds) == {three}
    assert set(plan_for("f-R(2+1)D").layer_kinds) == {Kind.FACTORIZED}
    assert str(plan_for("f-MC3")) == "3D|3D,2D,2D,2D"


@pytest.mark.parametrize("x", [2, 3, 4, 5])
def test_early_and_late_fusion_are_complements(x):
    early = plan_for(f"f-MC{x}").volumetric_layers
    late = plan_for(f"f-rMC{x}").volumetric_layers
    assert early | late == frozenset(range(1, 6))
    assert not early & late


def test_unknown_variant_lists_valid_names():
    with pytest.raises(ValueError, match="f-rMC5"):
        build_variant("f-MC6")


@pytest.mark.parametrize(
    "args,expected", [((64, 64), 144), ((32, 32), 72), ((1, 32), 8), ((1, 32, 7, 3), 32)]
)
def test_choose_mid_channels(args, expected):
    assert choose_mid_channels(*args) == expected


@pytest.mark.parametrize("name", VARIANT_NAMES)
def test_depth_is_never_strided(name):
    variant = build_variant(name)
    for _, module in variant.named_modules():
        spec = getattr(module, "spec", None)
        if spec is not None and spec.ndim == 3:
            assert spec.stride[0] == 1


@pytest.mark.parametrize("name", VARIANT_NAMES)
def test_single_slice_input(name, rng):
    out = features_of(build_variant(name), rng.normal(size=(1, 1, 1, 16, 16)))
    assert out.shape == (1, FEATURE_DIM, 1)


def test_feature_shape(rng):
    out = features_of(build_variant("f-R2D"), rng.normal(size=(2, 1, 12, 64, 64)))
    assert out.shape == (2, 256, 12)


def test_2d_encoder_treats_slices_independently(rng):
    variant = build_variant("f-R2D", seed=1)
    x = rng.normal(size=(1, 1, 5, 16, 16))
    swapped = x[:, :, [0, 3, 2, 1, 4]]
    a, b = features_of(variant, x), features_of(variant, swapped)
    assert_allclose(b, a[:, :, [0, 3, 2, 1, 4]], rtol=1e-12, atol=1e-12)


def test_late_fusion_depth_receptive_radius(rng):
    variant = build_variant("f-rMC5", seed=2)
    x = rng.normal(size=(1, 1, 13, 16, 16))
    probe = x.copy()
    probe[0, 0, 6] += 5.0
    diff = np.abs(features_of(variant, probe) - features_of(variant, x)).max(axis=1)[0]
    distance = np.abs(np.arange(13) - 6)
    assert np.all(diff[distance > 4] == 0)
    assert diff[6] > 0
    assert diff[2] > 0 and diff[10] > 0


def test_deterministic_forward(rng):
    x = rng.normal(size=(1, 1, 3, 16, 16))
    a = features_of(build_variant("f-MC3", seed=4), x)
    b = features_of(build_variant("f-MC3", seed=4), x)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("shape", [(1, 1, 4, 20, 16), (1, 1, 4, 32, 40)])
def test_indivisible_extent_gives_padding_hint(shape):
    with pytest.raises(ValueError, match="pad by"):
        check_input(Tensor(np.zeros(shape)))


def test_input_needs_one_channel():
    with pytest.raises(ValueError, match="N, 1, D, H, W"):
        check_input(Tensor(np.zeros((1, 2, 4, 16, 16))))


def test_slice_head_is_shared(rng):
    fc = Linear(256, 1, rng)
    values = Tensor(rng.normal(size=(2, 256, 3)))
    weights = rng.normal(size=(2, 3))
    logits = slice_head(FeatureMatrix(values, 3), fc)
    assert logits.shape == (2, 3)
    (logits * Tensor(weights)).sum().backward()
    expected = np.einsum("nd,ncd->c", weights, values.data)
    assert_allclose(fc.weight.grad[0], expected)
    assert_allclose(fc.bias.grad, [weights.sum()])


def test_slice_head_examples(rng):
    fc = Linear(256, 1, rng)
    column = rng.normal(size=(1, 256, 1))
    logits = slice_head(FeatureMatrix(Tensor(np.repeat(column, 4, axis=2)), 4), fc)
    assert_allclose(logits.data, logits.data[0, 0])
    fc.bias = Parameter([0.3])
    zero = slice_head(FeatureMatrix(Tensor(np.zeros((2, 256, 3))), 3), fc)
    assert_allclose(zero.data, 0.3)


def test_feature_matrix_requires_256_channels():
    with pytest.raises(ValueError):
        FeatureMatrix(Tensor(np.zeros((1, 128, 2))), 2)


@pytest.mark.parametrize("name", ["f-R2D", "f-MC3", "f-R(2+1)D"])
def test_describe_total_matches_count(name):
    variant = build_variant(name)
    table = describe_table(variant, (1, 1, 2, 16, 16))
    assert table.iloc[-1]["name"] == "total"
    assert table.iloc[-1]["params"] == count_params(variant)
    assert table["kernel"].str.endswith("7x7").any()
    assert variant.training
    assert describe(variant, (1, 1, 2, 16, 16)).splitlines()[-1].split()[-1] == str(
        count_params(variant)
    )
