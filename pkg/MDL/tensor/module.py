"""Layer containers in the style of ``torch.nn.Module``."""
from collections import OrderedDict
from contextlib import contextmanager
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .ops import (
    ConvSpec,
    RunningStats,
    batch_norm,
    conv2d,
    conv3d,
    fold_depth,
    fully_connected,
    max_pool_xy,
    relu,
    unfold_depth,
)
from .tensor import Parameter, Tensor

_TRACES: List[list] = []


@contextmanager
def trace_modules() -> Iterator[list]:
    """Collect ``(module, output_shape)`` for every leaf layer called in the block."""
    rows: list = []
    _TRACES.append(rows)
    try:
        yield rows
    finally:
        _TRACES.remove(rows)


class Module:
    """Base class: parameters, buffers, children and train/eval mode.

    Names are dotted attribute paths; lists of modules are indexed
    (``stages.0.1.conv1.weight``).
    """

    buffer_names: Tuple[str, ...] = ()
    leaf = False

    def __init__(self):
        """Initialize."""
        self.training = True
        self.name = ""

    def forward(self, *args, **kwargs):
        """Compute the output."""
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        """Run forward and record leaf layers when tracing."""
        out = self.forward(*args, **kwargs)
        if self.leaf and _TRACES:
            for rows in _TRACES:
                rows.append((self, out.shape))
        return out

    def named_children(self) -> Iterator[Tuple[str, "Module"]]:
        """Direct sub-modules in definition order."""
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item
                    elif isinstance(item, (list, tuple)):
                        for j, sub in enumerate(item):
                            if isinstance(sub, Module):
                                yield f"{key}.{i}.{j}", sub

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        """All modules, self first; sets ``module.name`` as a side effect."""
        self.name = prefix
        yield prefix, self
        for key, child in self.named_children():
            yield from child.named_modules(f"{prefix}.{key}" if prefix else key)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        """All parameters with hierarchical names; sets ``Parameter.name``."""
        for mod_name, module in self.named_modules(prefix):
            for key, value in vars(module).items():
                if isinstance(value, Parameter):
                    name = f"{mod_name}.{key}" if mod_name else key
                    value.name = name
                    yield name, value

    def parameters(self) -> List[Parameter]:
        """List of parameters."""
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        """Non-learnable state arrays (batch-norm running statistics)."""
        for mod_name, module in self.named_modules():
            for key in module.buffer_names:
                yield f"{mod_name}.{key}" if mod_name else key, getattr(module, key)

    def num_parameters(self) -> int:
        """Count of learnable scalars."""
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters followed by buffers."""
        state = OrderedDict((n, p.data) for n, p in self.named_parameters())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """Copy values in place; names and shapes must match exactly.

        :param state: Mapping name -> array.
        :type state: Dict[str, np.ndarray]
        :rtype: None
        """
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ValueError(f"State mismatch: missing {missing}, unexpected {extra}.")
        for name, target in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != target.shape:
                raise ValueError(
                    f"Shape mismatch for {name}: {value.shape} vs {target.shape}."
                )
            target[...] = value

    def train(self, mode: bool = True) -> "Module":
        """Set training mode recursively."""
        for _, module in self.named_modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        """Set evaluation mode recursively."""
        return self.train(False)

    def zero_grad(self) -> None:
        """Drop all gradients."""
        for p in self.parameters():
            p.grad = None


class Conv(Module):
    """Bias-free convolution; 2D kernels on 5D input run slice by slice.

    :param spec: Geometry.
    :type spec: ConvSpec
    :param rng: Generator for He-normal (fan-in) initialization.
    :type rng: np.random.Generator
    """

    leaf = True

    def __init__(self, spec: ConvSpec, rng: np.random.Generator):
        """Initialize."""
        super().__init__()
        self.spec = spec
        fan_in = spec.in_channels * int(np.prod(spec.kernel))
        self.weight = Parameter(
            rng.standard_normal(spec.weight_shape) * np.sqrt(2.0 / fan_in)
        )

    def forward(self, x: Tensor) -> Tensor:
        """Convolve."""
        if self.spec.ndim == 3:
            return conv3d(x, self.spec, self.weight)
        if x.ndim == 5:
            return unfold_depth(conv2d(fold_depth(x), self.spec, self.weight), x.shape[0])
        return conv2d(x, self.spec, self.weight)


class BatchNorm(Module):
    """Batch normalization with learnable scale and shift.

    :param channels: Number of channels.
    :type channels: int
    """

    leaf = True
    buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        """Initialize."""
        super().__init__()
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.stats = RunningStats.init(channels, momentum)
        self.eps = eps

    @property
    def running_mean(self) -> np.ndarray:
        """Running mean buffer."""
        return self.stats.mean

    @property
    def running_var(self) -> np.ndarray:
        """Running variance buffer."""
        return self.stats.var

    def forward(self, x: Tensor) -> Tensor:
        """Normalize."""
        return batch_norm(x, self.gamma, self.beta, self.stats, self.training, self.eps)


class Linear(Module):
    """Fully connected layer with bias, initialized uniform in ±1/sqrt(F).

    :param in_features: F.
    :type in_features: int
    :param out_features: Number of outputs.
    :type out_features: int
    :param rng: Generator.
    :type rng: np.random.Generator
    """

    leaf = True

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        """Initialize."""
        super().__init__()
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Parameter(rng.uniform(-bound, bound, (out_features, in_features)))
        self.bias = Parameter(rng.uniform(-bound, bound, out_features))

    @property
    def in_features(self) -> int:
        """F."""
        return self.weight.shape[1]

    def forward(self, x: Tensor) -> Tensor:
        """Apply ``x W^T + b``."""
        return fully_connected(x, self.weight, self.bias)


class MaxPoolXY(Module):
    """In-plane max pooling, parameter free."""

    leaf = True

    def __init__(self, kernel: int = 3, stride: int = 2, padding: int = 1):
        """Initialize."""
        super().__init__()
        self.kernel, self.stride, self.padding = kernel, stride, padding

    def forward(self, x: Tensor) -> Tensor:
        """Pool."""
        return max_pool_xy(x, self.kernel, self.stride, self.padding)


class Conv2Plus1D(Module):
    """Factorized 3D convolution: 1×k×k in-plane conv, BN, ReLU, then dk×1×1 depth conv.

    :param in_ch: Input channels.
    :type in_ch: int
    :param out_ch: Output channels.
    :type out_ch: int
    :param mid_ch: Channels between the two convs.
    :type mid_ch: int
    :param rng: Generator.
    :type rng: np.random.Generator
    :param spatial_stride: In-plane stride of the first conv.
    :type spatial_stride: int
    :param spatial_k: In-plane kernel size.
    :type spatial_k: int
    :param depth_k: Depth kernel size.
    :type depth_k: int
    """

    def __init__(
        self,
        in_ch: int,
        out_ch: int,
        mid_ch: int,
        rng: np.random.Generator,
        spatial_stride: int = 1,
        spatial_k: int = 3,
        depth_k: int = 3,
    ):
        """Initialize."""
        super().__init__()
        if mid_ch < 1:
            raise ValueError(f"mid_ch must be at least 1, got {mid_ch}.")
        self.spatial = Conv(
            ConvSpec.same((1, spatial_k, spatial_k), in_ch, mid_ch, spatial_stride), rng
        )
        self.bn_mid = BatchNorm(mid_ch)
        self.depth = Conv(ConvSpec.same((depth_k, 1, 1), mid_ch, out_ch), rng)
        self.mid_ch = mid_ch

    def forward(self, x: Tensor) -> Tensor:
        """Apply the factorized pair."""
        return self.depth(relu(self.bn_mid(self.spatial(x))))


def conv2plus1d(
    input: Tensor,
    in_ch: int,
    out_ch: int,
    mid_ch: int,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Functional form of :class:`Conv2Plus1D` with freshly initialized weights.

    :param input: [N, C, D, H, W] tensor.
    :type input: Tensor
    :param in_ch: Input channels.
    :type in_ch: int
    :param out_ch: Output channels.
    :type out_ch: int
    :param mid_ch: Middle channels.
    :type mid_ch: int
    :param rng: Generator for the weights.
    :type rng: Optional[np.random.Generator]
    :rtype: Tensor
    """
    layer = Conv2Plus1D(in_ch, out_ch, mid_ch, rng or np.random.default_rng(0))
    return layer(input)
