"""ResNet-18 style slice encoders mixing 2D, 3D and (2+1)D convolutions.

Layer 1 is the stem, layers 2-5 are the four residual stages. A variant is a
:class:`StagePlan` that says which kind of convolution each layer uses.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..tensor import (
    BatchNorm,
    Conv,
    Conv2Plus1D,
    ConvSpec,
    Linear,
    MaxPoolXY,
    Module,
    Tensor,
    global_avg_pool_xy,
    no_grad,
    relu,
    trace_modules,
)

logger = logging.getLogger(__name__)

CHANNELS = (32, 64, 128, 256)
FEATURE_DIM = CHANNELS[-1]
SPATIAL_DIVISOR = 16

VARIANT_NAMES = (
    "f-R2D",
    "f-MC2",
    "f-MC3",
    "f-MC4",
    "f-MC5",
    "f-rMC2",
    "f-rMC3",
    "f-rMC4",
    "f-rMC5",
    "f-R3D",
    "f-R(2+1)D",
)


class Kind(str, Enum):
    """Convolution kind of one layer."""

    TWO_D = "2D"
    THREE_D = "3D"
    FACTORIZED = "FACTORIZED"


@dataclass(frozen=True)
class StagePlan:
    """Declarative layout of an encoder.

    :param stem: Kind of layer 1.
    :param stages: Kinds of layers 2-5.
    :param channels: Output width of each stage.
    :param blocks: Basic blocks per stage.
    """

    stem: Kind
    stages: Tuple[Kind, ...]
    channels: Tuple[int, ...] = CHANNELS
    blocks: int = 2

    def __post_init__(self):
        """Validate."""
        if len(self.stages) != 4 or len(self.channels) != 4:
            raise ValueError(
                f"A plan needs 4 stages and 4 widths, got {self.stages} / {self.channels}."
            )
        if self.channels != CHANNELS:
            raise ValueError(f"Stage widths are fixed at {CHANNELS}, got {self.channels}.")

    @property
    def layer_kinds(self) -> Tuple[Kind, ...]:
        """Kinds of layers 1..5."""
        return (self.stem,) + tuple(self.stages)

    @property
    def volumetric_layers(self) -> frozenset:
        """Indices (1-based) of layers that mix information along depth."""
        return frozenset(i + 1 for i, k in enumerate(self.layer_kinds) if k != Kind.TWO_D)

    def __str__(self):
        """Short form like ``3D|2D,2D,2D,2D``."""
        return f"{self.stem.value}|" + ",".join(k.value for k in self.stages)


def plan_for(name: str) -> StagePlan:
    """Return the stage plan of a variant.

    f-MCx: layers 1..x-1 are 3D, the rest 2D. f-rMCx: layers 1..x-1 are 2D,
    the rest 3D.

    :param name: Variant name from :data:`VARIANT_NAMES`.
    :type name: str
    :rtype: StagePlan
    """
    if name not in VARIANT_NAMES:
        raise ValueError(f"Unknown variant '{name}'. Valid names: {', '.join(VARIANT_NAMES)}.")
    two, three = Kind.TWO_D, Kind.THREE_D
    if name == "f-R2D":
        kinds = [two] * 5
    elif name == "f-R3D":
        kinds = [three] * 5
    elif name == "f-R(2+1)D":
        kinds = [Kind.FACTORIZED] * 5
    else:
        x = int(name[-1])
        early, late = (three, two) if name.startswith("f-MC") else (two, three)
        kinds = [early if layer < x else late for layer in range(1, 6)]
    return StagePlan(kinds[0], tuple(kinds[1:]))


def choose_mid_channels(in_ch: int, out_ch: int, spatial_k: int = 3, depth_k: int = 3) -> int:
    """Middle width that keeps a (2+1)D pair at the budget of the full 3D kernel.

    :param in_ch: Input channels.
    :type in_ch: int
    :param out_ch: Output channels.
    :type out_ch: int
    :param spatial_k: In-plane kernel size.
    :type spatial_k: int
    :param depth_k: Depth kernel size.
    :type depth_k: int
    :rtype: int
    """
    if min(in_ch, out_ch, spatial_k, depth_k) < 1:
        raise ValueError(f"Channels and kernels must be positive, got {in_ch}, {out_ch}.")
    return (depth_k * spatial_k**2 * in_ch * out_ch) // (spatial_k**2 * in_ch + depth_k * out_ch)


def make_conv(
    kind: Kind, in_ch: int, out_ch: int, rng: np.random.Generator, stride: int = 1
) -> Module:
    """3×3 (2D), 3×3×3 (3D) or factorized convolution."""
    if kind == Kind.TWO_D:
        return Conv(ConvSpec.same((3, 3), in_ch, out_ch, stride), rng)
    if kind == Kind.THREE_D:
        return Conv(ConvSpec.same((3, 3, 3), in_ch, out_ch, stride), rng)
    return Conv2Plus1D(
        in_ch, out_ch, choose_mid_channels(in_ch, out_ch), rng, spatial_stride=stride
    )


class ConvBnAct(Module):
    """Convolution followed by batch norm and optional ReLU."""

    def __init__(self, conv: Module, channels: int, act: bool = True):
        """Initialize."""
        super().__init__()
        self.conv = conv
        self.bn = BatchNorm(channels)
        self.act = act

    def forward(self, x: Tensor) -> Tensor:
        """Apply."""
        y = self.bn(self.conv(x))
        return relu(y) if self.act else y


class Stem(Module):
    """Layer 1: wide-kernel strided convolution, BN, ReLU and in-plane max-pool.

    :param kind: 2D (7×7), 3D (3×7×7) or factorized (1×7×7 then 3×1×1).
    :type kind: Kind
    :param rng: Generator.
    :type rng: np.random.Generator
    """

    def __init__(self, kind: Kind, rng: np.random.Generator, out_ch: int = CHANNELS[0]):
        """Initialize."""
        super().__init__()
        self.kind = kind
        if kind == Kind.TWO_D:
            conv = Conv(ConvSpec((7, 7), (2, 2), (3, 3), 1, out_ch), rng)
        elif kind == Kind.THREE_D:
            conv = Conv(ConvSpec((3, 7, 7), (1, 2, 2), (1, 3, 3), 1, out_ch), rng)
        else:
            conv = Conv2Plus1D(
                1,
                out_ch,
                choose_mid_channels(1, out_ch),
                rng,
                spatial_stride=2,
                spatial_k=7,
            )
        self.body = ConvBnAct(conv, out_ch)
        self.pool = MaxPoolXY(3, 2, 1)

    def forward(self, x: Tensor) -> Tensor:
        """Apply."""
        return self.pool(self.body(x))


class BasicBlock(Module):
    """Two convolutions with an identity or projection shortcut.

    :param kind: Convolution kind of the block.
    :type kind: Kind
    :param in_ch: Input channels.
    :type in_ch: int
    :param out_ch: Output channels.
    :type out_ch: int
    :param stride: In-plane stride of the first convolution.
    :type stride: int
    :param rng: Generator.
    :type rng: np.random.Generator
    """

    def __init__(
        self, kind: Kind, in_ch: int, out_ch: int, stride: int, rng: np.random.Generator
    ):
        """Initialize."""
        super().__init__()
        self.first = ConvBnAct(make_conv(kind, in_ch, out_ch, rng, stride), out_ch)
        self.second = ConvBnAct(make_conv(kind, out_ch, out_ch, rng), out_ch, act=False)
        self.shortcut: Optional[ConvBnAct] = None
        if stride != 1 or in_ch != out_ch:
            kernel = (1, 1) if kind == Kind.TWO_D else (1, 1, 1)
            self.shortcut = ConvBnAct(
                Conv(ConvSpec.same(kernel, in_ch, out_ch, stride), rng), out_ch, act=False
            )

    def forward(self, x: Tensor) -> Tensor:
        """Apply."""
        skip = x if self.shortcut is None else self.shortcut(x)
        return relu(self.second(self.first(x)) + skip)


class ResNetEncoder(Module):
    """Stem plus four stages of basic blocks, pooled in-plane to [N, 256, D].

    :param plan: Layout.
    :type plan: StagePlan
    :param rng: Generator.
    :type rng: np.random.Generator
    """

    def __init__(self, plan: StagePlan, rng: np.random.Generator):
        """Initialize."""
        super().__init__()
        self.stem = Stem(plan.stem, rng)
        self.stages: List[List[BasicBlock]] = []
        in_ch = CHANNELS[0]
        for i, (kind, out_ch) in enumerate(zip(plan.stages, plan.channels)):
            blocks = []
            for b in range(plan.blocks):
                stride = 2 if (i > 0 and b == 0) else 1
                blocks.append(BasicBlock(kind, in_ch, out_ch, stride, rng))
                in_ch = out_ch
            self.stages.append(blocks)

    def forward(self, x: Tensor) -> Tensor:
        """[N, 1, D, H, W] -> [N, 256, D]."""
        depth = x.shape[2]
        x = self.stem(x)
        for i, blocks in enumerate(self.stages):
            for block in blocks:
                x = block(x)
            if x.shape[2] != depth:
                raise RuntimeError(
                    f"Stage {i + 1} changed depth from {depth} to {x.shape[2]}."
                )
        return global_avg_pool_xy(x)


class EncoderVariant(Module):
    """Named encoder with its shared per-slice classification head.

    :param name: Variant name.
    :type name: str
    :param seed: Initialization seed.
    :type seed: int
    """

    def __init__(self, name: str, seed: int = 0):
        """Initialize."""
        super().__init__()
        self.variant_name = name
        self.plan = plan_for(name)
        rng = np.random.default_rng(seed)
        self.encoder = ResNetEncoder(self.plan, rng)
        self.head = Linear(FEATURE_DIM, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        """Per-slice features [N, 256, D]."""
        return self.encoder(x)

    def __repr__(self):
        """Represent."""
        return f"EncoderVariant({self.variant_name}, plan={self.plan})"


@dataclass
class FeatureMatrix:
    """Per-slice features.

    :param values: [N, 256, D] tensor.
    :param slice_count: D.
    """

    values: Tensor
    slice_count: int

    def __post_init__(self):
        """Validate."""
        if self.values.ndim != 3 or self.values.shape[1] != FEATURE_DIM:
            raise ValueError(
                f"Features must be [N, {FEATURE_DIM}, D], got {self.values.shape}."
            )
        if self.values.shape[2] != self.slice_count:
            raise ValueError(
                f"slice_count {self.slice_count} does not match {self.values.shape}."
            )


def build_variant(name: str, seed: int = 0) -> EncoderVariant:
    """Build and initialize one of the eleven variants.

    :param name: Variant name.
    :type name: str
    :param seed: Initialization seed.
    :type seed: int
    :rtype: EncoderVariant
    """
    variant = EncoderVariant(name, seed)
    logger.debug("Built %s with %d parameters", name, count_params(variant))
    return variant


def count_params(variant: Module) -> int:
    """Number of learnable scalars; running statistics are not counted.

    :param variant: Built model.
    :type variant: Module
    :rtype: int
    """
    return variant.num_parameters()


def padding_hint(extent: int, divisor: int = SPATIAL_DIVISOR) -> int:
    """Voxels to add so that ``extent`` becomes divisible by ``divisor``."""
    return (-extent) % divisor


def check_input(volume_batch: Tensor) -> None:
    """Reject batches the encoders cannot process.

    :param volume_batch: [N, 1, D, H, W] tensor.
    :type volume_batch: Tensor
    :rtype: None
    """
    shape = volume_batch.shape
    if volume_batch.ndim != 5 or shape[1] != 1:
        raise ValueError(f"Expected a [N, 1, D, H, W] batch, got {shape}.")
    if shape[0] < 1 or shape[2] < 1:
        raise ValueError(f"Batch and depth must be non-empty, got {shape}.")
    h, w = shape[3], shape[4]
    if h % SPATIAL_DIVISOR or w % SPATIAL_DIVISOR:
        raise ValueError(
            f"H and W must be divisible by {SPATIAL_DIVISOR}, got {h}x{w}; "
            f"pad by {padding_hint(h)} rows and {padding_hint(w)} columns."
        )


def encode(variant: EncoderVariant, volume_batch: Tensor) -> FeatureMatrix:
    """Per-slice 256-d features of a volume batch.

    :param variant: Encoder.
    :type variant: EncoderVariant
    :param volume_batch: [N, 1, D, H, W] tensor.
    :type volume_batch: Tensor
    :rtype: FeatureMatrix
    """
    check_input(volume_batch)
    values = variant(volume_batch)
    return FeatureMatrix(values, volume_batch.shape[2])


def slice_head(features: FeatureMatrix, fc: Linear) -> Tensor:
    """Apply one shared fully connected layer to every slice column.

    :param features: Per-slice features.
    :type features: FeatureMatrix
    :param fc: Head with 256 inputs and 1 output.
    :type fc: Linear
    :rtype: Tensor
    """
    if fc.in_features != FEATURE_DIM:
        raise ValueError(f"Head expects {fc.in_features} inputs, features have {FEATURE_DIM}.")
    n, c, d = features.values.shape
    rows = features.values.transpose(0, 2, 1).reshape(n * d, c)
    return fc(rows).reshape(n, d)


def _kernel_of(module: Module) -> Tuple[str, str]:
    spec = getattr(module, "spec", None)
    if spec is not None:
        return "x".join(map(str, spec.kernel)), "x".join(map(str, spec.stride))
    if isinstance(module, MaxPoolXY):
        return f"{module.kernel}x{module.kernel}", f"{module.stride}x{module.stride}"
    return "", ""


def describe_table(
    variant: EncoderVariant, input_shape: Sequence[int] = (1, 1, 8, 64, 64)
) -> pd.DataFrame:
    """Per-layer table (name, type, kernel, stride, output shape, params) with a total row.

    :param variant: Encoder.
    :type variant: EncoderVariant
    :param input_shape: Probe batch shape.
    :type input_shape: Sequence[int]
    :rtype: pd.DataFrame
    """
    dict(variant.named_parameters())  # assigns module names
    was_training = variant.training
    variant.eval()
    try:
        with no_grad(), trace_modules() as rows:
            feats = encode(variant, Tensor(np.zeros(tuple(input_shape))))
            slice_head(feats, variant.head)
    finally:
        variant.train(was_training)
    records = []
    for module, shape in rows:
        kernel, stride = _kernel_of(module)
        records.append(
            {
                "name": module.name,
                "type": type(module).__name__,
                "kernel": kernel,
                "stride": stride,
                "output": "x".join(map(str, shape)),
                "params": module.num_parameters(),
            }
        )
    df = pd.DataFrame.from_records(records)
    total = int(df["params"].sum())
    if total != count_params(variant):
        raise RuntimeError(f"Layer table total {total} != {count_params(variant)}.")
    df.loc[len(df)] = ["total", "", "", "", "", total]
    return df


def describe(variant: EncoderVariant, input_shape: Sequence[int] = (1, 1, 8, 64, 64)) -> str:
    """Plain-text layer table whose last row is the parameter total.

    :param variant: Encoder.
    :type variant: EncoderVariant
    :param input_shape: Probe batch shape.
    :type input_shape: Sequence[int]
    :rtype: str
    """
    return describe_table(variant, input_shape).to_string(index=False)
