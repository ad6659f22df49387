"""Dense float64 tensor with reverse-mode automatic differentiation."""
import hashlib
from contextlib import contextmanager
from typing import Callable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np


class NonFiniteError(FloatingPointError):
    """Forward op produced NaN or inf."""


_GRAD_ENABLED = True
_BRANCH_TRACKERS = []


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    """Return True if ops record the autodiff graph."""
    return _GRAD_ENABLED


class BranchTracker:
    """Records decisions of non-smooth ops (ReLU masks, argmax picks).

    ``digest`` changes whenever any op takes a different branch, ``min_margin``
    is the smallest distance of a ReLU/clip input to its kink.
    """

    def __init__(self):
        """Initialize."""
        self._hash = hashlib.sha1()
        self.min_margin = np.inf
        self.n_records = 0

    def record(self, decision: np.ndarray, margin: Optional[float] = None) -> None:
        """Add one decision array.

        :param decision: Mask or index array chosen by the op.
        :type decision: np.ndarray
        :param margin: Distance of the op input to the nearest kink.
        :type margin: Optional[float]
        :rtype: None
        """
        decision = np.ascontiguousarray(decision)
        self._hash.update(str(decision.shape).encode())
        self._hash.update(decision.tobytes())
        self.n_records += 1
        if margin is not None:
            self.min_margin = min(self.min_margin, float(margin))

    @property
    def digest(self) -> str:
        """Hex digest over all recorded decisions."""
        return self._hash.hexdigest()


@contextmanager
def track_branches() -> Iterator[BranchTracker]:
    """Collect branch decisions of all non-smooth ops run inside the block."""
    tracker = BranchTracker()
    _BRANCH_TRACKERS.append(tracker)
    try:
        yield tracker
    finally:
        _BRANCH_TRACKERS.remove(tracker)


def record_branch(decision: np.ndarray, margin: Optional[float] = None) -> None:
    """Report a branch decision to every active tracker.

    :param decision: Mask or index array.
    :type decision: np.ndarray
    :param margin: Distance to the kink.
    :type margin: Optional[float]
    :rtype: None
    """
    for tracker in _BRANCH_TRACKERS:
        tracker.record(decision, margin)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


ArrayLike = Union[np.ndarray, float, int, Sequence[float]]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """N-dimensional float64 array that records the ops applied to it.

    :param data: Values, converted to float64.
    :type data: ArrayLike
    :param requires_grad: Flag for leaf tensors that accumulate ``grad``.
    :type requires_grad: bool
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        """Initialize."""
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = ""

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: BackwardFn,
        op: str,
    ) -> "Tensor":
        """Create the output of an op and attach it to the graph.

        ``backward`` maps the output gradient to one gradient (or None) per parent.

        :param data: Output values.
        :type data: np.ndarray
        :param parents: Input tensors.
        :type parents: Sequence[Tensor]
        :param backward: Vector-Jacobian product.
        :type backward: BackwardFn
        :param op: Op name for diagnostics.
        :type op: str
        :rtype: Tensor
        """
        data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(
                f"Op '{op}' produced non-finite values "
                f"(input shapes {[p.shape for p in parents]})."
            )
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._op = op
        out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        """Shape of data."""
        return self.data.shape

    @property
    def ndim(self) -> int:
        """Number of axes."""
        return self.data.ndim

    @property
    def size(self) -> int:
        """Number of elements."""
        return self.data.size

    def numpy(self) -> np.ndarray:
        """Return a copy of the values."""
        return self.data.copy()

    def item(self) -> float:
        """Return the value of a one-element tensor."""
        return float(self.data.reshape(-1)[0]) if self.size == 1 else self.data.item()

    def detach(self) -> "Tensor":
        """Return a constant tensor sharing the values."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        """Reset gradient buffer."""
        self.grad = None

    def __repr__(self):
        """Represent."""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Backpropagate from this tensor into every leaf with ``requires_grad``.

        :param grad: Seed gradient, defaults to 1 for one-element tensors.
        :type grad: Optional[np.ndarray]
        :rtype: None
        """
        if grad is None:
            if self.size != 1:
                raise ValueError(
                    f"backward() without a seed needs a scalar, got shape {self.shape}."
                )
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return

        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # arithmetic

    def __add__(self, other: ArrayLike) -> "Tensor":
        """Add with broadcasting."""
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor.from_op(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)),
            "add",
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        """Negate."""
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other: ArrayLike) -> "Tensor":
        """Subtract with broadcasting."""
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor.from_op(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a), -_unbroadcast(g, b)),
            "sub",
        )

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        """Subtract from a constant."""
        return as_tensor(other) - self

    def __mul__(self, other: ArrayLike) -> "Tensor":
        """Multiply elementwise with broadcasting."""
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor.from_op(
            x * y,
            (self, other),
            lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
            "mul",
        )

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        """Divide elementwise with broadcasting."""
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor.from_op(
            x / y,
            (self, other),
            lambda g: (
                _unbroadcast(g / y, x.shape),
                _unbroadcast(-g * x / (y * y), y.shape),
            ),
            "div",
        )

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        """Divide a constant."""
        return as_tensor(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        """Raise to a constant power; below exponent 1 the gradient at 0 is taken as 0."""
        if exponent == 0:
            return Tensor(np.ones_like(self.data))
        x = self.data

        def backward(g):
            with np.errstate(divide="ignore", invalid="ignore"):
                slope = exponent * x ** (exponent - 1)
            if exponent < 1:
                slope = np.where(x == 0, 0.0, slope)
            return (g * slope,)

        return Tensor.from_op(x**exponent, (self,), backward, "pow")

    def __matmul__(self, other: "Tensor") -> "Tensor":
        """Batched matrix product (numpy semantics)."""
        other = as_tensor(other)
        x, y = self.data, other.data
        if x.ndim < 2 or y.ndim < 2:
            raise ValueError(f"matmul needs 2+ axes, got {x.shape} and {y.shape}.")

        def backward(g):
            gx = np.matmul(g, np.swapaxes(y, -1, -2))
            gy = np.matmul(np.swapaxes(x, -1, -2), g)
            return _unbroadcast(gx, x.shape), _unbroadcast(gy, y.shape)

        return Tensor.from_op(np.matmul(x, y), (self, other), backward, "matmul")

    def __getitem__(self, index) -> "Tensor":
        """Basic or advanced indexing; gradients scatter back with ``np.add.at``."""
        shape = self.shape

        def backward(g):
            out = np.zeros(shape)
            np.add.at(out, index, g)
            return (out,)

        return Tensor.from_op(self.data[index], (self,), backward, "getitem")

    # reductions and shape ops

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        """Sum over axes."""
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor.from_op(
            self.data.sum(axis=axis, keepdims=keepdims), (self,), backward, "sum"
        )

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        """Arithmetic mean over axes."""
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis: int, keepdims: bool = False) -> "Tensor":
        """Maximum along one axis; the subgradient goes to the lowest maximizing index."""
        x = self.data
        idx = np.expand_dims(np.argmax(x, axis=axis), axis)
        record_branch(idx)
        values = np.take_along_axis(x, idx, axis=axis)

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            out = np.zeros_like(x)
            np.put_along_axis(out, idx, g, axis=axis)
            return (out,)

        if not keepdims:
            values = np.squeeze(values, axis=axis)
        return Tensor.from_op(values, (self,), backward, "max")

    def reshape(self, *shape) -> "Tensor":
        """Reshape."""
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor.from_op(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(old),), "reshape"
        )

    def transpose(self, *axes) -> "Tensor":
        """Permute axes."""
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor.from_op(
            np.ascontiguousarray(self.data.transpose(axes)),
            (self,),
            lambda g: (g.transpose(inverse),),
            "transpose",
        )

    # elementwise functions

    def exp(self) -> "Tensor":
        """Exponential."""
        out = np.exp(self.data)
        return Tensor.from_op(out, (self,), lambda g: (g * out,), "exp")

    def log(self) -> "Tensor":
        """Natural logarithm."""
        x = self.data
        return Tensor.from_op(np.log(x), (self,), lambda g: (g / x,), "log")

    def sqrt(self) -> "Tensor":
        """Square root."""
        out = np.sqrt(self.data)
        return Tensor.from_op(out, (self,), lambda g: (g * 0.5 / out,), "sqrt")

    def clip(self, low: Optional[float] = None, high: Optional[float] = None) -> "Tensor":
        """Clamp values; gradient passes only where the input is inside the range."""
        x = self.data
        lo = -np.inf if low is None else low
        hi = np.inf if high is None else high
        inside = (x >= lo) & (x <= hi)
        record_branch(inside)
        return Tensor.from_op(
            np.clip(x, lo, hi), (self,), lambda g: (g * inside,), "clip"
        )


class Parameter(Tensor):
    """Learnable tensor owned by a module.

    :param data: Initial values.
    :type data: ArrayLike
    :param name: Hierarchical identifier, set when the owning model is assembled.
    :type name: str
    """

    def __init__(self, data: ArrayLike, name: str = ""):
        """Initialize."""
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        """Represent."""
        return f"Parameter(name={self.name!r}, shape={self.shape})"


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    """Wrap constants into a tensor without gradient."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)
