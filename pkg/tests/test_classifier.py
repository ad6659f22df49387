"""Slice-mode and volume-mode classifiers."""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from MDL.model.classifier import build_classifier, group_by_depth


def test_group_by_depth(volume_factory):
    volumes = [volume_factory(depth=d) for d in (4, 5, 4, 6, 5)]
    assert group_by_depth(volumes) == {4: [0, 2], 5: [1, 4], 6: [3]}


def test_slice_mode_scores_representative_slices(volume_factory):
    volumes = [
        volume_factory(depth=4, size=16, reps=(1,)),
        volume_factory(depth=5, size=16, reps=(0, 2, 4)),
        volume_factory(depth=4, size=16, reps=(2, 3)),
    ]
    model = build_classifier("f-R2D", "slice", seed=0)
    logits, embeddings, owner = model(volumes)
    assert logits.shape == (6,)
    assert embeddings.shape == (6, 256)
    assert list(owner) == [0, 1, 1, 1, 2, 2]
    assert list(model.sample_labels(volumes, owner)) == [volumes[i].label for i in owner]


@pytest.mark.parametrize("aggregator,dim", [("att", 256), ("bilinear", 65_536)])
def test_volume_mode_outputs(volume_factory, aggregator, dim):
    volumes = [volume_factory(depth=d, size=16) for d in (3, 4, 3)]
    model = build_classifier("f-rMC5", "volume", aggregator, seed=0)
    logits, embeddings, owner = model(volumes)
    assert logits.shape == (3,)
    assert embeddings.shape == (3, dim)
    assert list(owner) == [0, 1, 2]
    assert model.embedding_dim == dim


def test_eval_predictions_do_not_depend_on_batch_mates(volume_factory):
    a, b = volume_factory(depth=4, size=16), volume_factory(depth=4, size=16, reps=(0,))
    model = build_classifier("f-MC2", "volume", "mxp", seed=3).eval()
    together = model.predict_proba([a, b])
    assert_allclose(together[0], model.predict_proba([a])[0], atol=1e-12)
    assert_allclose(together[1], model.predict_proba([b])[0], atol=1e-12)
    assert np.all((together[0] > 0) & (together[0] < 1))


def test_same_seed_same_weights():
    a = build_classifier("f-R2D", "slice", seed=7).state_dict()
    b = build_classifier("f-R2D", "slice", seed=7).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)


@pytest.mark.parametrize(
    "mode,aggregator,match",
    [("slice", "att", "aggregator"), ("volume", None, "aggregator"), ("patch", None, "mode")],
)
def test_mode_and_aggregator_must_agree(mode, aggregator, match):
    with pytest.raises(ValueError, match=match):
        build_classifier("f-R2D", mode, aggregator)


def test_empty_batch_rejected():
    with pytest.raises(ValueError, match="Empty"):
        build_classifier("f-R2D", "slice")([])
