"""Focal, center and triplet losses and their joint recipes."""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from ..tensor import Tensor, l2_normalize, no_grad, record_branch, relu, sigmoid

logger = logging.getLogger(__name__)

RECIPES = ("focal", "focal+center", "focal+triplet")
MINING_MODES = ("batch-hard", "semi-hard")
LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    """Loss recipe and hyperparameters.

    :param recipe: One of :data:`RECIPES`.
    :param gamma: Focusing exponent of the focal loss.
    :param center_alpha: Update rate of the class centers.
    :param center_lambda: Weight of the center term.
    :param triplet_margin: Hinge margin.
    :param triplet_lambda: Weight of the triplet term.
    :param mining_mode: One of :data:`MINING_MODES`.
    :param normalize_embeddings: Project embeddings to the unit sphere before triplet distances.
    """

    recipe: str = "focal"
    gamma: float = 2.0
    center_alpha: float = 0.5
    center_lambda: float = 0.003
    triplet_margin: float = 0.2
    triplet_lambda: float = 1.0
    mining_mode: str = "batch-hard"
    normalize_embeddings: bool = True

    def __post_init__(self):
        """Validate."""
        if self.recipe not in RECIPES:
            raise ValueError(
                f"Unknown recipe '{self.recipe}'. Valid recipes: {', '.join(RECIPES)}."
            )
        if self.mining_mode not in MINING_MODES:
            raise ValueError(
                f"Unknown mining_mode '{self.mining_mode}'. Valid modes: {', '.join(MINING_MODES)}."
            )
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}.")
        if not 0 <= self.center_alpha <= 1:
            raise ValueError(f"center_alpha must be in [0, 1], got {self.center_alpha}.")
        if self.center_lambda < 0 or self.triplet_lambda < 0 or self.triplet_margin < 0:
            raise ValueError("Loss weights and margin must be non-negative.")


@dataclass
class LabeledBatch:
    """Inputs of the joint loss.

    :param logits: [N, 1] or [N] logits.
    :param embeddings: [N, E] features feeding the head.
    :param labels: N labels in {0, 1}.
    """

    logits: Tensor
    embeddings: Tensor
    labels: np.ndarray

    def __post_init__(self):
        """Validate."""
        self.labels = _check_labels(self.labels, self.logits.shape[0])
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != len(self.labels):
            raise ValueError(
                f"Embeddings {self.embeddings.shape} do not match {len(self.labels)} labels."
            )


@dataclass
class CenterState:
    """Per-class feature centers, rows indexed by label.

    :param centers: [2, E] array.
    :param alpha: Update rate.
    """

    centers: np.ndarray
    alpha: float = 0.5

    @classmethod
    def init(cls, dim: int, alpha: float = 0.5, n_classes: int = 2) -> "CenterState":
        """Zero centers."""
        return cls(np.zeros((n_classes, dim)), alpha)


def _check_labels(labels, n: int) -> np.ndarray:
    labels = np.asarray(labels).astype(int).reshape(-1)
    if n < 1 or labels.shape != (n,):
        raise ValueError(f"Expected {n} labels (N >= 1), got shape {labels.shape}.")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError(f"Labels must be 0 or 1, got {np.unique(labels)}.")
    return labels


def focal_loss(logits: Tensor, labels, gamma: float = 2.0) -> Tensor:
    """Batch mean of ``-(1 - p)^gamma * log(p)``, p the probability of the true class.

    :param logits: [N, 1] or [N] logits.
    :type logits: Tensor
    :param labels: N labels in {0, 1}.
    :type labels: array-like
    :param gamma: Focusing exponent, >= 0.
    :type gamma: float
    :rtype: Tensor
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}.")
    z = logits.reshape(-1)
    y = _check_labels(labels, z.shape[0]).astype(float)
    s = sigmoid(z)
    p = s * y + (1.0 - s) * (1.0 - y)
    weight = (1.0 - p) ** gamma
    return -(weight * p.clip(low=LOG_FLOOR).log()).mean()


def center_loss(
    embeddings: Tensor, labels, state: CenterState, training: bool = True
) -> Tuple[Tensor, CenterState]:
    """``0.5 * sum_i ||x_i - c_{y_i}||^2`` and the updated centers.

    Centers are constants for autodiff. Classes absent from the batch keep their
    center; in evaluation mode no center moves.

    :param embeddings: [N, E] features.
    :type embeddings: Tensor
    :param labels: N labels.
    :type labels: array-like
    :param state: Current centers.
    :type state: CenterState
    :param training: Update the centers.
    :type training: bool
    :rtype: Tuple[Tensor, CenterState]
    """
    y = _check_labels(labels, embeddings.shape[0])
    if state.centers.shape[1] != embeddings.shape[1]:
        raise ValueError(
            f"Centers {state.centers.shape} do not match embeddings {embeddings.shape}."
        )
    diff = embeddings - Tensor(state.centers[y])
    loss = (diff * diff).sum() * 0.5
    if training:
        x = embeddings.data
        centers = state.centers.copy()
        for cls in np.unique(y):
            members = y == cls
            delta = (state.centers[cls] - x[members]).sum(axis=0) / (1 + members.sum())
            centers[cls] = state.centers[cls] - state.alpha * delta
        state = CenterState(centers, state.alpha)
    return loss, state


def pairwise_sq_distances(embeddings: np.ndarray) -> np.ndarray:
    """Squared euclidean distance matrix of the rows."""
    diff = embeddings[:, None, :] - embeddings[None, :, :]
    return (diff**2).sum(axis=-1)


def mine_triplets(
    distances: np.ndarray, labels, mode: str = "batch-hard", margin: float = 0.2
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pick one positive and one negative per valid anchor.

    Batch-hard takes the farthest positive and the closest negative. Semi-hard
    takes the closest negative farther than the chosen positive but within the
    margin, falling back to the closest negative. Ties go to the lowest index.

    :param distances: [N, N] squared distances.
    :type distances: np.ndarray
    :param labels: N labels.
    :type labels: array-like
    :param mode: One of :data:`MINING_MODES`.
    :type mode: str
    :param margin: Margin bounding the semi-hard band.
    :type margin: float
    :rtype: Tuple[np.ndarray, np.ndarray, np.ndarray]
    """
    if mode not in MINING_MODES:
        raise ValueError(f"Unknown mining mode '{mode}'. Valid modes: {', '.join(MINING_MODES)}.")
    y = _check_labels(labels, distances.shape[0])
    n = len(y)
    same = y[:, None] == y[None, :]
    pos_mask = same & ~np.eye(n, dtype=bool)
    neg_mask = ~same
    valid = pos_mask.any(axis=1) & neg_mask.any(axis=1)
    anchors = np.flatnonzero(valid)
    pos = np.argmax(np.where(pos_mask, distances, -np.inf), axis=1)[anchors]
    neg = np.argmin(np.where(neg_mask, distances, np.inf), axis=1)[anchors]
    if mode == "semi-hard":
        for k, a in enumerate(anchors):
            d_ap = distances[a, pos[k]]
            band = neg_mask[a] & (distances[a] > d_ap) & (distances[a] < d_ap + margin)
            if band.any():
                neg[k] = np.argmin(np.where(band, distances[a], np.inf))
    record_branch(np.concatenate([anchors, pos, neg]))
    return anchors, pos, neg


def triplet_loss_batch_hard(
    embeddings: Tensor,
    labels,
    margin: float = 0.2,
    mining_mode: str = "batch-hard",
    normalize: bool = True,
    reduction: str = "mean",
) -> Tensor:
    """Triplet hinge ``max(0, d(a, p) - d(a, n) + margin)`` over online-mined triplets.

    With ``reduction="mean"`` the mean over valid anchors is returned; a batch
    without a valid anchor gives 0 and a warning. ``reduction="none"`` returns
    one value per sample, 0 for samples that are not valid anchors.

    :param embeddings: [N, E] features.
    :type embeddings: Tensor
    :param labels: N labels.
    :type labels: array-like
    :param margin: Hinge margin.
    :type margin: float
    :param mining_mode: One of :data:`MINING_MODES`.
    :type mining_mode: str
    :param normalize: Use unit-norm embeddings.
    :type normalize: bool
    :param reduction: 'mean' or 'none'.
    :type reduction: str
    :rtype: Tensor
    """
    if reduction not in ("mean", "none"):
        raise ValueError(f"Unknown reduction '{reduction}'.")
    y = _check_labels(labels, embeddings.shape[0])
    e = l2_normalize(embeddings, axis=-1) if normalize else embeddings
    with no_grad():
        dist = pairwise_sq_distances(e.data)
    anchors, pos, neg = mine_triplets(dist, y, mining_mode, margin)
    if len(anchors) == 0:
        logger.warning(
            "Triplet loss: no anchor with both a positive and a negative in a batch of %d.",
            len(y),
        )
        return Tensor(np.zeros(len(y))) if reduction == "none" else Tensor(0.0)
    anchor_rows = e[anchors]
    d_pos = ((anchor_rows - e[pos]) ** 2).sum(axis=-1)
    d_neg = ((anchor_rows - e[neg]) ** 2).sum(axis=-1)
    per_anchor = relu(d_pos - d_neg + margin)
    if reduction == "mean":
        return per_anchor.mean()
    scatter = np.zeros((len(y), len(anchors)))
    scatter[anchors, np.arange(len(anchors))] = 1.0
    return (Tensor(scatter) @ per_anchor.reshape(-1, 1)).reshape(-1)


def joint_loss_terms(
    batch: LabeledBatch,
    config: LossConfig = LossConfig(),
    center_state: Optional[CenterState] = None,
    training: bool = True,
) -> Tuple[Dict[str, Tensor], Optional[CenterState]]:
    """Unweighted loss components of a recipe and the updated centers.

    :param batch: Logits, embeddings and labels.
    :type batch: LabeledBatch
    :param config: Recipe and hyperparameters.
    :type config: LossConfig
    :param center_state: Required for the center recipe.
    :type center_state: Optional[CenterState]
    :param training: Update centers.
    :type training: bool
    :rtype: Tuple[Dict[str, Tensor], Optional[CenterState]]
    """
    terms = {"focal": focal_loss(batch.logits, batch.labels, config.gamma)}
    if config.recipe == "focal+center":
        if center_state is None:
            raise ValueError("Recipe 'focal+center' needs a CenterState.")
        terms["center"], center_state = center_loss(
            batch.embeddings, batch.labels, center_state, training
        )
    elif config.recipe == "focal+triplet":
        terms["triplet"] = triplet_loss_batch_hard(
            batch.embeddings,
            batch.labels,
            config.triplet_margin,
            config.mining_mode,
            config.normalize_embeddings,
        )
    return terms, center_state


def joint_loss(
    batch: LabeledBatch,
    config: LossConfig = LossConfig(),
    center_state: Optional[CenterState] = None,
    training: bool = True,
) -> Tuple[Tensor, Optional[CenterState]]:
    """Focal loss plus the weighted auxiliary term of the recipe.

    :param batch: Logits, embeddings and labels.
    :type batch: LabeledBatch
    :param config: Recipe and hyperparameters.
    :type config: LossConfig
    :param center_state: Required for the center recipe.
    :type center_state: Optional[CenterState]
    :param training: Update centers.
    :type training: bool
    :rtype: Tuple[Tensor, Optional[CenterState]]
    """
    terms, center_state = joint_loss_terms(batch, config, center_state, training)
    return combine_terms(terms, config), center_state


def combine_terms(terms: Dict[str, Tensor], config: LossConfig) -> Tensor:
    """Weighted sum of loss components."""
    weights = {"focal": 1.0, "center": config.center_lambda, "triplet": config.triplet_lambda}
    total = terms["focal"]
    for name, value in terms.items():
        if name != "focal":
            total = total + value * weights[name]
    return total
