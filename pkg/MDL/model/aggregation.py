"""Depth aggregation of per-slice features and the volume-level head."""
import logging
from enum import Enum

import numpy as np

from ..tensor import Linear, Module, Tensor, l2_normalize, signed_sqrt, softmax
from .encoders import FEATURE_DIM, FeatureMatrix

logger = logging.getLogger(__name__)


class AggregatorKind(str, Enum):
    """Depth aggregation; the value is the config token."""

    AVP = "avp"
    MXP = "mxp"
    ATT = "att"
    BILINEAR = "bilinear"


AGGREGATORS = tuple(k.value for k in AggregatorKind)


def aggregator_kind(token) -> AggregatorKind:
    """Parse a config token (or pass a kind through).

    :param token: One of :data:`AGGREGATORS`.
    :type token: Union[str, AggregatorKind]
    :rtype: AggregatorKind
    """
    if isinstance(token, AggregatorKind):
        return token
    try:
        return AggregatorKind(str(token).lower())
    except ValueError:
        raise ValueError(
            f"Unknown aggregator '{token}'. Valid tokens: {', '.join(AGGREGATORS)}."
        ) from None


def output_dim(kind, channels: int = FEATURE_DIM) -> int:
    """C for avp/mxp/att, C² for bilinear."""
    return channels**2 if aggregator_kind(kind) == AggregatorKind.BILINEAR else channels


def bilinear_logit_scale(channels: int = FEATURE_DIM) -> float:
    """Factor applied to the unit-norm bilinear feature in front of the head."""
    return float(np.sqrt(channels))


def attention_weights(values: Tensor) -> Tensor:
    """Softmax over depth of each channel's own features, [N, C, D]."""
    return softmax(values, axis=-1)


def bilinear_pool(values: Tensor) -> Tensor:
    """Sum over slices of outer products, signed square root, then unit l2 norm.

    :param values: [N, C, D] features.
    :type values: Tensor
    :rtype: Tensor
    """
    n, c, _ = values.shape
    outer = values @ values.transpose(0, 2, 1)
    return l2_normalize(signed_sqrt(outer.reshape(n, c * c)), axis=-1)


def aggregate(features, kind) -> Tensor:
    """Collapse the depth axis: [N, C, D] -> [N, C] (or [N, C²] for bilinear).

    :param features: Per-slice features (a FeatureMatrix or a [N, C, D] tensor).
    :type features: Union[FeatureMatrix, Tensor]
    :param kind: Aggregator kind or token.
    :type kind: Union[str, AggregatorKind]
    :rtype: Tensor
    """
    values = features.values if isinstance(features, FeatureMatrix) else features
    if values.ndim != 3 or values.shape[2] < 1:
        raise ValueError(f"Expected [N, C, D] features with D >= 1, got {values.shape}.")
    kind = aggregator_kind(kind)
    if kind == AggregatorKind.AVP:
        return values.mean(axis=-1)
    if kind == AggregatorKind.MXP:
        return values.max(axis=-1)
    if kind == AggregatorKind.ATT:
        return (attention_weights(values) * values).sum(axis=-1)
    return bilinear_pool(values)


class VolumeHead(Module):
    """One-logit fully connected head sized for an aggregator.

    :param kind: Aggregator kind or token.
    :type kind: Union[str, AggregatorKind]
    :param rng: Generator.
    :type rng: np.random.Generator
    :param channels: Feature width C.
    :type channels: int
    """

    def __init__(self, kind, rng: np.random.Generator, channels: int = FEATURE_DIM):
        """Initialize."""
        super().__init__()
        self.kind = aggregator_kind(kind)
        self.channels = channels
        self.fc = Linear(output_dim(self.kind, channels), 1, rng)

    def forward(self, aggregated: Tensor) -> Tensor:
        """[N, C or C²] -> [N, 1]."""
        return volume_head(aggregated, self.kind, self.fc, self.channels)


def volume_head(
    aggregated: Tensor, kind, fc: Linear, channels: int = FEATURE_DIM
) -> Tensor:
    """Fully connected map of the aggregated feature to one logit per volume.

    A bilinear feature is multiplied by :func:`bilinear_logit_scale` first.

    :param aggregated: [N, C] or [N, C²] tensor.
    :type aggregated: Tensor
    :param kind: Aggregator the input came from.
    :type kind: Union[str, AggregatorKind]
    :param fc: Head layer.
    :type fc: Linear
    :param channels: Feature width C before aggregation.
    :type channels: int
    :rtype: Tensor
    """
    kind = aggregator_kind(kind)
    expected = output_dim(kind, channels)
    if aggregated.ndim != 2 or aggregated.shape[1] != expected or fc.in_features != expected:
        raise ValueError(
            f"{kind.value} head with C={channels} expects [N, {expected}] input and "
            f"{expected} head inputs, got {aggregated.shape} and {fc.in_features}."
        )
    if kind == AggregatorKind.BILINEAR:
        aggregated = aggregated * bilinear_logit_scale(channels)
    return fc(aggregated)
