"""Slice-level and volume-level classifiers built on an encoder variant."""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..dataset.volume import Volume
from ..tensor import Module, Tensor, concat, no_grad, sigmoid
from .aggregation import VolumeHead, aggregate, aggregator_kind
from .encoders import FEATURE_DIM, FeatureMatrix, build_variant, check_input, slice_head

logger = logging.getLogger(__name__)

MODES = ("slice", "volume")


def group_by_depth(volumes: Sequence[Volume]) -> Dict[int, List[int]]:
    """Indices of volumes sharing a depth, groups in order of first appearance."""
    groups: Dict[int, List[int]] = {}
    for i, v in enumerate(volumes):
        groups.setdefault(v.depth, []).append(i)
    return groups


def stack(volumes: Sequence[Volume]) -> Tensor:
    """[N, 1, D, H, W] batch of equal-depth volumes."""
    return Tensor(np.stack([v.voxels[None] for v in volumes]))


class Classifier(Module):
    """Encoder plus head producing one logit and one embedding per scored sample.

    A sample is a representative slice in slice mode and a whole volume in
    volume mode.
    """

    mode = ""

    def __init__(self, arch: str, seed: int = 0):
        """Initialize."""
        super().__init__()
        self.arch = arch
        variant = build_variant(arch, seed)
        self.encoder = variant.encoder
        self._slice_head = variant.head
        self.rng = np.random.default_rng([seed, 1])

    @property
    def embedding_dim(self) -> int:
        """Width E of the embeddings."""
        raise NotImplementedError

    def batch_outputs(
        self, volumes: Sequence[Volume], x: Tensor
    ) -> Tuple[Tensor, Tensor, np.ndarray]:
        """Outputs for one equal-depth batch ``x`` stacked from ``volumes``.

        Returns logits, embeddings and the batch row of every sample.
        """
        raise NotImplementedError

    def forward(self, volumes: Sequence[Volume]) -> Tuple[Tensor, Tensor, np.ndarray]:
        """Logits [M], embeddings [M, E] and the volume index of each sample.

        Volumes of different depth are run as separate batches; samples come
        back ordered by volume.

        :param volumes: Preprocessed volumes.
        :type volumes: Sequence[Volume]
        :rtype: Tuple[Tensor, Tensor, np.ndarray]
        """
        if not volumes:
            raise ValueError("Empty volume batch.")
        logits, embeddings, owners = [], [], []
        for indices in group_by_depth(volumes).values():
            group = [volumes[i] for i in indices]
            x = stack(group)
            check_input(x)
            lg, emb, local = self.batch_outputs(group, x)
            logits.append(lg)
            embeddings.append(emb)
            owners.append(np.asarray(indices)[local])
        owner = np.concatenate(owners)
        order = np.argsort(owner, kind="stable")
        if len(logits) == 1 and np.array_equal(order, np.arange(len(owner))):
            return logits[0], embeddings[0], owner
        return concat(logits)[order], concat(embeddings)[order], owner[order]

    def sample_labels(self, volumes: Sequence[Volume], owner: np.ndarray) -> np.ndarray:
        """Label of every sample."""
        return np.array([volumes[i].label for i in owner], dtype=int)

    def predict_proba(self, volumes: Sequence[Volume]) -> List[np.ndarray]:
        """Probabilities of class 1, one array of sample scores per volume.

        :param volumes: Preprocessed volumes.
        :type volumes: Sequence[Volume]
        :rtype: List[np.ndarray]
        """
        with no_grad():
            logits, _, owner = self(volumes)
            probs = sigmoid(logits).data
        return [probs[owner == i] for i in range(len(volumes))]


class SliceClassifier(Classifier):
    """Shared per-slice head; scored samples are the representative slices.

    :param arch: Encoder variant name.
    :type arch: str
    :param seed: Initialization seed.
    :type seed: int
    """

    mode = "slice"

    def __init__(self, arch: str, seed: int = 0):
        """Initialize."""
        super().__init__(arch, seed)
        self.head = self._slice_head
        del self._slice_head

    @property
    def embedding_dim(self) -> int:
        """E = 256."""
        return FEATURE_DIM

    def batch_outputs(self, volumes, x):
        """Representative-slice logits and 256-d slice features."""
        values = self.encoder(x)
        logits = slice_head(FeatureMatrix(values, x.shape[2]), self.head)
        rows = np.concatenate(
            [np.full(len(v.representative_slices), i) for i, v in enumerate(volumes)]
        )
        cols = np.concatenate([np.asarray(v.representative_slices) for v in volumes])
        embeddings = values.transpose(0, 2, 1)[rows, cols]
        return logits[rows, cols], embeddings, rows


class VolumeClassifier(Classifier):
    """Depth aggregation and a volume head; one scored sample per volume.

    :param arch: Encoder variant name.
    :type arch: str
    :param aggregator: Aggregator token.
    :type aggregator: str
    :param seed: Initialization seed.
    :type seed: int
    """

    mode = "volume"

    def __init__(self, arch: str, aggregator: str, seed: int = 0):
        """Initialize."""
        super().__init__(arch, seed)
        del self._slice_head
        self.aggregator = aggregator_kind(aggregator)
        self.head = VolumeHead(self.aggregator, self.rng)

    @property
    def embedding_dim(self) -> int:
        """E = C, or C² for bilinear."""
        return self.head.fc.in_features

    def batch_outputs(self, volumes, x):
        """Volume logits and aggregated features."""
        pooled = aggregate(self.encoder(x), self.aggregator)
        logits = self.head(pooled).reshape(-1)
        return logits, pooled, np.arange(len(volumes))


def build_classifier(
    arch: str, mode: str, aggregator: Optional[str] = None, seed: int = 0
) -> Classifier:
    """Classifier for a (variant, mode, aggregator) cell.

    :param arch: Variant name.
    :type arch: str
    :param mode: 'slice' or 'volume'.
    :type mode: str
    :param aggregator: Required in volume mode, forbidden in slice mode.
    :type aggregator: Optional[str]
    :param seed: Initialization seed.
    :type seed: int
    :rtype: Classifier
    """
    if mode == "slice":
        if aggregator:
            raise ValueError("Slice mode does not take an aggregator.")
        return SliceClassifier(arch, seed)
    if mode == "volume":
        if not aggregator:
            raise ValueError("Volume mode needs an aggregator.")
        return VolumeClassifier(arch, aggregator, seed)
    raise ValueError(f"Unknown mode '{mode}'. Valid modes: {', '.join(MODES)}.")
