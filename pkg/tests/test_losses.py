"""Focal, center and triplet losses and the joint recipes."""
import logging
from itertools import product

import numpy as np
import pytest
from numpy.testing import assert_allclose

from MDL.model.losses import (
    CenterState,
    LabeledBatch,
    LossConfig,
    center_loss,
    focal_loss,
    joint_loss,
    joint_loss_terms,
    mine_triplets,
    pairwise_sq_distances,
    triplet_loss_batch_hard,
)
from MDL.tensor import Tensor, grad_check


def logits_for(p):
    """Logits whose sigmoid is ``p``."""
    p = np.asarray(p, dtype=float)
    return Tensor(np.log(p / (1 - p)).reshape(-1, 1))


@pytest.mark.parametrize("gamma,expected", [(0.0, np.log(2.0)), (2.0, 0.25 * np.log(2.0))])
def test_focal_at_even_odds(gamma, expected):
    loss = focal_loss(Tensor(np.zeros((4, 1))), [0, 1, 1, 0], gamma)
    assert loss.item() == pytest.approx(expected, abs=1e-12)


def test_focal_vanishes_for_confident_predictions():
    assert focal_loss(Tensor([[40.0], [-40.0]]), [1, 0]).item() < 1e-12


def test_focal_is_decreasing_and_below_cross_entropy():
    ps = np.linspace(0.05, 0.95, 19)
    focal = [focal_loss(logits_for([p]), [1], 2.0).item() for p in ps]
    ce = [focal_loss(logits_for([p]), [1], 0.0).item() for p in ps]
    assert np.all(np.diff(focal) < 0)
    assert np.all(np.array(focal) >= 0)
    easy = ps > 0.5
    assert np.all(np.array(focal)[easy] < np.array(ce)[easy])


def test_focal_label_zero_uses_complement():
    assert focal_loss(logits_for([0.2]), [0], 0.0).item() == pytest.approx(-np.log(0.8))


def test_focal_rejects_negative_gamma():
    with pytest.raises(ValueError):
        focal_loss(Tensor([[0.0]]), [1], -1.0)


def test_center_examples():
    state = CenterState.init(2, alpha=0.5)
    loss, new = center_loss(Tensor([[1.0, 0.0]]), [1], state)
    assert loss.item() == pytest.approx(0.5)
    assert_allclose(new.centers[1], [0.25, 0.0])
    assert_allclose(new.centers[0], [0.0, 0.0])
    assert_allclose(state.centers, 0.0)


def test_center_loss_zero_at_centers():
    state = CenterState(np.array([[1.0, 2.0], [-1.0, 0.5]]), 0.5)
    x = Tensor(state.centers[[0, 1, 1]])
    loss, new = center_loss(x, [0, 1, 1], state)
    assert loss.item() == 0.0
    assert_allclose(new.centers, state.centers)


def test_center_loss_eval_mode_keeps_centers(rng):
    state = CenterState(rng.normal(size=(2, 3)))
    _, new = center_loss(Tensor(rng.normal(size=(4, 3))), [0, 1, 0, 1], state, training=False)
    assert new is state


def test_center_loss_decreases_towards_center(rng):
    state = CenterState(rng.normal(size=(2, 4)))
    x = rng.normal(size=(1, 4))
    target = state.centers[1]
    losses = [
        center_loss(Tensor(x + t * (target - x)), [1], state, training=False)[0].item()
        for t in np.linspace(0, 1, 6)
    ]
    assert np.all(np.diff(losses) < 0)


def test_center_loss_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        center_loss(Tensor(rng.normal(size=(2, 3))), [0, 1], CenterState.init(4))


def test_triplet_hinge_value():
    e = Tensor([[0.0, 0.0], [np.sqrt(0.5), 0.0], [0.0, np.sqrt(0.2)]])
    per_sample = triplet_loss_batch_hard(e, [1, 1, 0], 0.2, normalize=False, reduction="none")
    assert per_sample.data[0] == pytest.approx(0.5)
    assert per_sample.data[2] == 0.0


def test_triplet_inactive_hinge():
    e = Tensor([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    loss = triplet_loss_batch_hard(e, [1, 1, 0], 0.2, normalize=False)
    assert loss.item() == 0.0


def test_batch_hard_matches_exhaustive_search(rng):
    e = rng.normal(size=(8, 5))
    e /= np.linalg.norm(e, axis=1, keepdims=True)
    labels = np.array([0, 1, 1, 0, 1, 0, 1, 1])
    d = pairwise_sq_distances(e)
    anchors, pos, neg = mine_triplets(d, labels)
    assert list(anchors) == list(range(8))
    for a, p, n in zip(anchors, pos, neg):
        best = None
        for q, r in product(range(8), range(8)):
            if q == a or labels[q] != labels[a] or labels[r] == labels[a]:
                continue
            key = (-d[a, q], d[a, r])
            if best is None or key < best[0]:
                best = (key, q, r)
        assert (p, n) == best[1:]


def test_semi_hard_prefers_negatives_in_band():
    d = np.array(
        [
            [0.0, 0.5, 0.1, 0.6],
            [0.5, 0.0, 0.9, 0.9],
            [0.1, 0.9, 0.0, 0.3],
            [0.6, 0.9, 0.3, 0.0],
        ]
    )
    labels = [1, 1, 0, 0]
    _, _, hard = mine_triplets(d, labels, "batch-hard", margin=0.2)
    _, _, semi = mine_triplets(d, labels, "semi-hard", margin=0.2)
    assert hard[0] == 2
    assert semi[0] == 3


def test_triplet_rotation_invariance(rng):
    e = rng.normal(size=(10, 6))
    labels = rng.integers(0, 2, 10)
    labels[:2] = [0, 1]
    q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    a = triplet_loss_batch_hard(Tensor(e), labels).item()
    b = triplet_loss_batch_hard(Tensor(e @ q), labels).item()
    assert a == pytest.approx(b, abs=1e-9)


def test_triplet_without_anchor_warns(caplog):
    with caplog.at_level(logging.WARNING):
        loss = triplet_loss_batch_hard(Tensor([[1.0, 0.0], [0.0, 1.0]]), [0, 1])
    assert loss.item() == 0.0
    assert "no anchor" in caplog.text


@pytest.mark.parametrize("recipe", ["focal", "focal+center", "focal+triplet"])
def test_losses_gradients(rng, recipe):
    logits = Tensor(rng.normal(size=(6, 1)), requires_grad=True)
    emb = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
    labels = np.array([0, 1, 1, 0, 1, 0])
    config = LossConfig(recipe=recipe)
    state = CenterState(rng.normal(size=(2, 4)))

    def f(z, e):
        return joint_loss(LabeledBatch(z, e, labels), config, state, training=False)[0]

    assert grad_check(f, [logits, emb], step=1e-5) <= 1e-5


def test_focal_recipe_is_focal_loss(rng):
    z = Tensor(rng.normal(size=(5, 1)))
    labels = [0, 1, 1, 0, 1]
    batch = LabeledBatch(z, Tensor(rng.normal(size=(5, 3))), labels)
    total, state = joint_loss(batch, LossConfig())
    assert total.item() == focal_loss(z, labels).item()
    assert state is None


def test_zero_center_weight_reduces_to_focal(rng):
    z = Tensor(rng.normal(size=(5, 1)))
    labels = [0, 1, 1, 0, 1]
    batch = LabeledBatch(z, Tensor(rng.normal(size=(5, 3))), labels)
    config = LossConfig(recipe="focal+center", center_lambda=0.0)
    total, state = joint_loss(batch, config, CenterState.init(3))
    assert total.item() == focal_loss(z, labels).item()
    assert not np.allclose(state.centers, 0.0)


def test_joint_gradient_is_sum_of_terms(rng):
    labels = np.array([0, 1, 1, 0, 1, 0])
    z0, e0 = rng.normal(size=(6, 1)), rng.normal(size=(6, 4))
    config = LossConfig(recipe="focal+triplet", triplet_lambda=0.7)

    def grads(select):
        z = Tensor(z0, requires_grad=True)
        e = Tensor(e0, requires_grad=True)
        terms, _ = joint_loss_terms(LabeledBatch(z, e, labels), config)
        select(terms).backward()
        return (
            np.zeros_like(z0) if z.grad is None else z.grad,
            np.zeros_like(e0) if e.grad is None else e.grad,
        )

    joint = grads(lambda t: t["focal"] + t["triplet"] * 0.7)
    focal = grads(lambda t: t["focal"])
    triplet = grads(lambda t: t["triplet"])
    assert_allclose(joint[0], focal[0] + 0.7 * triplet[0])
    assert_allclose(joint[1], focal[1] + 0.7 * triplet[1])


def test_center_recipe_needs_state(rng):
    batch = LabeledBatch(Tensor(np.zeros((2, 1))), Tensor(np.zeros((2, 3))), [0, 1])
    with pytest.raises(ValueError, match="CenterState"):
        joint_loss(batch, LossConfig(recipe="focal+center"))


@pytest.mark.parametrize(
    "kwargs",
    [{"recipe": "focal+arcface"}, {"mining_mode": "random"}, {"gamma": -1}, {"center_alpha": 2}],
)
def test_loss_config_validation(kwargs):
    with pytest.raises(ValueError):
        LossConfig(**kwargs)


def test_labels_must_be_binary():
    with pytest.raises(ValueError, match="0 or 1"):
        focal_loss(Tensor(np.zeros((2, 1))), [0, 2])


@pytest.mark.parametrize("gamma", [0.25, 0.5, 2.0])
def test_focal_gradient_finite_for_saturated_logit(gamma):
    logits = Tensor([[40.0], [0.3]], requires_grad=True)
    focal_loss(logits, [1, 0], gamma).backward()
    assert np.all(np.isfinite(logits.grad))
    assert logits.grad[0, 0] == 0.0
    assert logits.grad[1, 0] > 0.0
