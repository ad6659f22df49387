"""Neural-network operators over :class:`Tensor`."""
import logging
from dataclasses import dataclass
from itertools import product
from typing import Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Parameter, Tensor, as_tensor, record_branch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one convolution.

    Axis order of ``kernel``, ``stride`` and ``padding`` is (H, W) for 2D and
    (D, H, W) for 3D. Depth stride is always 1.
    """

    kernel: Tuple[int, ...]
    stride: Tuple[int, ...]
    padding: Tuple[int, ...]
    in_channels: int
    out_channels: int
    bias: bool = False

    def __post_init__(self):
        """Validate."""
        if len(self.kernel) not in (2, 3):
            raise ValueError(f"Kernel must have 2 or 3 axes, got {self.kernel}.")
        if not len(self.kernel) == len(self.stride) == len(self.padding):
            raise ValueError(
                f"kernel {self.kernel}, stride {self.stride} and padding "
                f"{self.padding} must have the same number of axes."
            )
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(
                f"Channels must be positive, got {self.in_channels}->{self.out_channels}."
            )
        if len(self.kernel) == 3 and self.stride[0] != 1:
            raise ValueError(f"Depth stride must be 1, got stride {self.stride}.")

    @classmethod
    def same(
        cls,
        kernel: Sequence[int],
        in_channels: int,
        out_channels: int,
        spatial_stride: int = 1,
    ) -> "ConvSpec":
        """Build a spec with ``floor(k/2)`` padding and stride only in-plane.

        :param kernel: Kernel extents.
        :type kernel: Sequence[int]
        :param in_channels: Input channels.
        :type in_channels: int
        :param out_channels: Output channels.
        :type out_channels: int
        :param spatial_stride: Stride along H and W.
        :type spatial_stride: int
        :rtype: ConvSpec
        """
        kernel = tuple(kernel)
        stride = (spatial_stride,) * 2
        if len(kernel) == 3:
            stride = (1,) + stride
        return cls(
            kernel, stride, tuple(k // 2 for k in kernel), in_channels, out_channels
        )

    @property
    def ndim(self) -> int:
        """Number of convolved axes."""
        return len(self.kernel)

    @property
    def weight_shape(self) -> Tuple[int, ...]:
        """Shape of the weight tensor [out, in, *kernel]."""
        return (self.out_channels, self.in_channels) + self.kernel

    def output_extent(self, extents: Sequence[int]) -> Tuple[int, ...]:
        """Output extents ``floor((X + 2p - k)/s) + 1`` per axis."""
        return tuple(
            (x + 2 * p - k) // s + 1
            for x, k, s, p in zip(extents, self.kernel, self.stride, self.padding)
        )


def _conv_nd(x: Tensor, w: Tensor, stride, padding) -> Tensor:
    """Cross-correlation over the trailing ``w.ndim - 2`` axes of ``x``.

    The input windows are copied once into a contiguous column matrix that the
    forward product and the weight gradient share.
    """
    nd = w.ndim - 2
    n, c = x.shape[:2]
    c_out = w.shape[0]
    kernel = w.shape[2:]
    sp_axes = tuple(range(2, 2 + nd))
    pad = [(0, 0), (0, 0)] + [(p, p) for p in padding]
    xp = np.pad(x.data, pad) if any(padding) else x.data
    win = sliding_window_view(xp, kernel, axis=sp_axes)
    win = win[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]
    out_sp = win.shape[2 : 2 + nd]
    if min(out_sp) < 1:
        raise ValueError(
            f"Input {x.shape} is too small for kernel {kernel} with padding {padding}."
        )
    # [N * prod(out), C * prod(kernel)], columns ordered like the flattened weights
    cols = np.ascontiguousarray(np.moveaxis(win, 1, 1 + nd)).reshape(-1, w.size // c_out)
    wmat = w.data.reshape(c_out, -1)
    out = (cols @ wmat.T).reshape((n,) + out_sp + (c_out,))
    out = np.ascontiguousarray(np.moveaxis(out, -1, 1))

    def backward(g):
        gmat = np.moveaxis(g, 1, -1).reshape(-1, c_out)
        gw = (gmat.T @ cols).reshape(w.shape)
        gcols = (gmat @ wmat).reshape((n,) + out_sp + (c, -1))
        # kernel offset first so that every offset is one contiguous block
        gcols = np.ascontiguousarray(np.moveaxis(gcols, -1, 0))
        gxp = np.zeros((n,) + xp.shape[2:] + (c,))
        for i, offs in enumerate(product(*(range(k) for k in kernel))):
            region = tuple(
                slice(o, o + s * (m - 1) + 1, s) for o, s, m in zip(offs, stride, out_sp)
            )
            gxp[(slice(None),) + region] += gcols[i]
        crop = tuple(slice(p, p + m) for p, m in zip(padding, x.shape[2:]))
        return np.moveaxis(gxp[(slice(None),) + crop], -1, 1), gw

    return Tensor.from_op(out, (x, w), backward, f"conv{nd}d")


def _check_conv(input: Tensor, spec: ConvSpec, weights: Tensor, nd: int) -> None:
    if spec.ndim != nd:
        raise ValueError(f"conv{nd}d needs a {nd}-axis kernel, got {spec.kernel}.")
    if input.ndim != nd + 2:
        raise ValueError(f"conv{nd}d input must have {nd + 2} axes, got {input.shape}.")
    if weights.shape != spec.weight_shape:
        raise ValueError(
            f"Weight shape {weights.shape} does not match spec {spec.weight_shape}."
        )
    if input.shape[1] != weights.shape[1]:
        raise ValueError(
            f"Input channels of {input.shape} do not match weight channels of "
            f"{weights.shape}."
        )


def conv2d(input: Tensor, spec: ConvSpec, weights: Parameter) -> Tensor:
    """2D cross-correlation of [N, C, H, W] with weights [C', C, kh, kw].

    :param input: Input tensor.
    :type input: Tensor
    :param spec: Convolution geometry.
    :type spec: ConvSpec
    :param weights: Kernel.
    :type weights: Parameter
    :rtype: Tensor
    """
    _check_conv(input, spec, weights, 2)
    return _conv_nd(input, weights, spec.stride, spec.padding)


def conv3d(input: Tensor, spec: ConvSpec, weights: Parameter) -> Tensor:
    """3D cross-correlation of [N, C, D, H, W]; the depth extent is preserved.

    :param input: Input tensor.
    :type input: Tensor
    :param spec: Convolution geometry.
    :type spec: ConvSpec
    :param weights: Kernel [C', C, kd, kh, kw].
    :type weights: Parameter
    :rtype: Tensor
    """
    _check_conv(input, spec, weights, 3)
    if 2 * spec.padding[0] != spec.kernel[0] - 1:
        raise ValueError(
            f"Depth padding {spec.padding[0]} does not preserve depth for "
            f"kernel {spec.kernel}."
        )
    return _conv_nd(input, weights, spec.stride, spec.padding)


def fold_depth(x: Tensor) -> Tensor:
    """[N, C, D, H, W] -> [N*D, C, H, W] so that slices become batch rows."""
    n, c, d, h, w = x.shape
    return x.transpose(0, 2, 1, 3, 4).reshape(n * d, c, h, w)


def unfold_depth(x: Tensor, n: int) -> Tensor:
    """Inverse of :func:`fold_depth`."""
    nd, c, h, w = x.shape
    return x.reshape(n, nd // n, c, h, w).transpose(0, 2, 1, 3, 4)


@dataclass
class RunningStats:
    """Batch-norm running statistics (buffers, not learnable)."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def init(cls, channels: int, momentum: float = 0.1) -> "RunningStats":
        """Zero mean, unit variance."""
        return cls(np.zeros(channels), np.ones(channels), momentum)


def batch_norm(
    input: Tensor,
    gamma: Parameter,
    beta: Parameter,
    running_stats: RunningStats,
    training: bool = True,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize over every axis except the channel axis 1.

    In training mode batch statistics are used and the running statistics are
    updated in place; otherwise the running statistics are used.

    :param input: [N, C, ...] tensor.
    :type input: Tensor
    :param gamma: Scale, length C.
    :type gamma: Parameter
    :param beta: Shift, length C.
    :type beta: Parameter
    :param running_stats: Running mean and variance.
    :type running_stats: RunningStats
    :param training: Mode flag.
    :type training: bool
    :param eps: Variance floor.
    :type eps: float
    :rtype: Tensor
    """
    c = input.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(
            f"gamma {gamma.shape} / beta {beta.shape} do not match channels of {input.shape}."
        )
    axes = (0,) + tuple(range(2, input.ndim))
    bshape = (1, c) + (1,) * (input.ndim - 2)
    x = input.data
    g_ = gamma.data.reshape(bshape)

    if training:
        m = x.size // c
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        mom = running_stats.momentum
        unbiased = var * m / max(m - 1, 1)
        running_stats.mean *= 1 - mom
        running_stats.mean += mom * mean
        running_stats.var *= 1 - mom
        running_stats.var += mom * unbiased
    else:
        m = None
        mean, var = running_stats.mean, running_stats.var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = g_ * xhat + beta.data.reshape(bshape)

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * g_
        if training:
            s1 = dxhat.sum(axis=axes, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
            dx = (inv_std.reshape(bshape) / m) * (m * dxhat - s1 - xhat * s2)
        else:
            dx = dxhat * inv_std.reshape(bshape)
        return dx, dgamma, dbeta

    return Tensor.from_op(out, (input, gamma, beta), backward, "batch_norm")


def relu(x: Tensor) -> Tensor:
    """Rectifier."""
    mask = x.data > 0
    record_branch(mask, margin=np.min(np.abs(x.data)) if x.size else None)
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, evaluated without overflow."""
    z = x.data
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor.from_op(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax with the per-slice maximum subtracted first."""
    shift = Tensor(x.data.max(axis=axis, keepdims=True))
    e = (x - shift).exp()
    return e / e.sum(axis=axis, keepdims=True)


def max_pool_xy(x: Tensor, kernel: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    """Max pooling over the last two (in-plane) axes only.

    :param x: [..., H, W] tensor.
    :type x: Tensor
    :param kernel: Window size.
    :type kernel: int
    :param stride: Step.
    :type stride: int
    :param padding: Padding with -inf.
    :type padding: int
    :rtype: Tensor
    """
    lead = x.shape[:-2]
    pad = [(0, 0)] * len(lead) + [(padding, padding)] * 2
    xp = np.pad(x.data, pad, constant_values=-np.inf)
    win = sliding_window_view(xp, (kernel, kernel), axis=(-2, -1))
    win = win[..., ::stride, ::stride, :, :]
    ho, wo = win.shape[-4], win.shape[-3]
    flat = win.reshape(lead + (ho, wo, kernel * kernel))
    idx = np.argmax(flat, axis=-1)
    record_branch(idx)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    hp, wp = xp.shape[-2:]

    def backward(g):
        n_lead = int(np.prod(lead)) if lead else 1
        rows = np.arange(ho)[:, None] * stride + idx.reshape(n_lead, ho, wo) // kernel
        cols = np.arange(wo)[None, :] * stride + idx.reshape(n_lead, ho, wo) % kernel
        batch = np.arange(n_lead)[:, None, None]
        gxp = np.zeros((n_lead, hp, wp))
        np.add.at(gxp, (batch, rows, cols), g.reshape(n_lead, ho, wo))
        gxp = gxp.reshape(lead + (hp, wp))
        return (gxp[..., padding : hp - padding, padding : wp - padding],)

    return Tensor.from_op(out, (x,), backward, "max_pool_xy")


def global_avg_pool_xy(input: Tensor) -> Tensor:
    """Mean over the two in-plane axes; [N,C,D,H,W] -> [N,C,D], [N,C,H,W] -> [N,C]."""
    if input.ndim not in (4, 5):
        raise ValueError(f"Expected 4 or 5 axes, got {input.shape}.")
    return input.mean(axis=(-2, -1))


def fully_connected(input: Tensor, weights: Parameter, bias: Parameter) -> Tensor:
    """Affine map ``x W^T + b`` of [N, F] rows.

    :param input: [N, F] tensor.
    :type input: Tensor
    :param weights: [O, F] matrix.
    :type weights: Parameter
    :param bias: [O] vector.
    :type bias: Parameter
    :rtype: Tensor
    """
    if input.ndim != 2 or weights.ndim != 2 or input.shape[1] != weights.shape[1]:
        raise ValueError(
            f"Input {input.shape} does not match weights {weights.shape}."
        )
    if bias.shape != (weights.shape[0],):
        raise ValueError(f"Bias {bias.shape} does not match weights {weights.shape}.")
    return input @ weights.transpose(1, 0) + bias


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along an axis."""
    tensors = [as_tensor(t) for t in tensors]
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor.from_op(
        np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat"
    )


def signed_sqrt(x: Tensor) -> Tensor:
    """``sign(x) * sqrt(|x|)``; gradient is taken as 0 at x = 0."""
    a = np.abs(x.data)
    root = np.sqrt(a)
    out = np.sign(x.data) * root
    record_branch(np.sign(x.data))
    safe = np.where(root > 0, root, 1.0)
    return Tensor.from_op(
        out, (x,), lambda g: (np.where(root > 0, 0.5 * g / safe, 0.0),), "signed_sqrt"
    )


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    """Scale rows to unit l2 norm; all-zero rows stay zero (no division).

    :param x: Input.
    :type x: Tensor
    :param axis: Axis of the vectors.
    :type axis: int
    :rtype: Tensor
    """
    norm = np.sqrt((x.data**2).sum(axis=axis, keepdims=True))
    zero = norm == 0
    if np.any(zero):
        logger.warning(
            "l2_normalize: %d zero vector(s) left unnormalized.", int(zero.sum())
        )
    safe = np.where(zero, 1.0, norm)
    out = np.where(zero, 0.0, x.data / safe)

    def backward(g):
        proj = (g * out).sum(axis=axis, keepdims=True)
        return (np.where(zero, 0.0, (g - out * proj) / safe),)

    return Tensor.from_op(out, (x,), backward, "l2_normalize")

