import itertools
import logging
from typing import Callable, Iterable, Sequence

import numpy as np

from spectral_diffusion.utils.errors import UsageError
from spectral_diffusion.utils.logger import configure_logger


logger = logging.getLogger(__name__)
configure_logger(logger)


class Tensor:
    """
    A float64 array node in a reverse-mode autodiff graph.

    Attributes:
        data (np.ndarray): The row-major values.
        requires_grad (bool): Whether gradients flow into this tensor.
        grad (np.ndarray | None): Accumulated gradient, same shape as data.
        name (str | None): Optional label used in error messages.
    """

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple["Tensor", ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._consumed = False

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        """
        Creates the output node of an operation.

        The graph is only recorded when at least one parent requires a gradient.
        `backward` maps the output gradient to one gradient (or None) per parent.
        """
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        out.name = None
        out._consumed = False
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    ##################################################
    # Backpropagation
    ##################################################

    def backward(self) -> None:
        """
        Propagates d(self)/d(leaf) into every leaf that requires a gradient.

        Raises:
            UsageError: If self is not a 1-element tensor, has no recorded graph,
                or its graph was already consumed by a previous call.
        """
        if self.size != 1:
            logger.error("backward called on a tensor of shape %s", self.shape)
            raise UsageError(f"backward requires a 1-element tensor, got shape {self.shape}")
        if self._consumed:
            logger.error("backward called twice on the same graph")
            raise UsageError("The computation graph has already been consumed")
        if not self.requires_grad:
            logger.error("backward called on a detached tensor")
            raise UsageError("backward called on a tensor that does not require grad")

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._backward is None:
                # Leaf
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            parent_grads = node._backward(grad)
            for parent, parent_grad in zip(node._parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad

        for node in order:
            node._parents = ()
            node._backward = None
        self._consumed = True

    ##################################################
    # Operator overloads
    ##################################################

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tensor_sum(self, axis)

    def mean(self, axis=None):
        return tensor_mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


##################################################
# Elementwise arithmetic
##################################################

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)

    return Tensor.from_op(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(-grad, b.shape)

    return Tensor.from_op(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        return _unbroadcast(grad * b.data, a.shape), _unbroadcast(grad * a.data, b.shape)

    return Tensor.from_op(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        return (
            _unbroadcast(grad / b.data, a.shape),
            _unbroadcast(-grad * a.data / (b.data * b.data), b.shape),
        )

    return Tensor.from_op(a.data / b.data, (a, b), backward)


def square(x: Tensor) -> Tensor:
    return mul(x, x)


def absolute(x: Tensor) -> Tensor:
    """|x| with subgradient 0 at x = 0."""
    x = as_tensor(x)

    def backward(grad):
        return (grad * np.sign(x.data),)

    return Tensor.from_op(np.abs(x.data), (x,), backward)


def _sigmoid(values: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * values))


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    x = as_tensor(x)
    sig = _sigmoid(x.data)

    def backward(grad):
        return (grad * sig * (1.0 + x.data * (1.0 - sig)),)

    return Tensor.from_op(x.data * sig, (x,), backward)


def wrap_phase(x: Tensor) -> Tensor:
    """
    Wraps angles into (-pi, pi].

    The wrap is piecewise constant, so the gradient passes straight through.
    """
    x = as_tensor(x)
    wrapped = x.data - 2.0 * np.pi * np.ceil((x.data - np.pi) / (2.0 * np.pi))

    def backward(grad):
        return (grad,)

    return Tensor.from_op(wrapped, (x,), backward)


##################################################
# Reductions and reshaping
##################################################

def tensor_sum(x: Tensor, axis=None) -> Tensor:
    x = as_tensor(x)

    def backward(grad):
        if axis is None:
            return (np.broadcast_to(grad, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(grad, axis), x.shape).copy(),)

    return Tensor.from_op(np.sum(x.data, axis=axis), (x,), backward)


def tensor_mean(x: Tensor, axis=None) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(tensor_sum(x, axis), 1.0 / count)


def reshape(x: Tensor, shape: Iterable[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)

    def backward(grad):
        return (grad.reshape(x.shape),)

    return Tensor.from_op(x.data.reshape(shape), (x,), backward)


def getitem(x: Tensor, index) -> Tensor:
    x = as_tensor(x)

    def backward(grad):
        full = np.zeros_like(x.data)
        np.add.at(full, index, grad)
        return (full,)

    return Tensor.from_op(x.data[index], (x,), backward)


##################################################
# Linear algebra
##################################################

def matmul(a, b) -> Tensor:
    """Matrix product of 2-D tensors."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        return grad @ b.data.T, a.data.T @ grad

    return Tensor.from_op(a.data @ b.data, (a, b), backward)


def apply_matrix(x, matrix: np.ndarray, axis: int) -> Tensor:
    """
    Applies a fixed linear map along one axis: y = M x.

    Used by the wavelet filter banks, whose analysis operators are small dense
    matrices per axis length.
    """
    x = as_tensor(x)
    axis = axis % x.ndim

    def forward(values, mat):
        return np.moveaxis(np.tensordot(mat, values, axes=([1], [axis])), 0, axis)

    def backward(grad):
        return (forward(grad, matrix.T),)

    return Tensor.from_op(forward(x.data, matrix), (x,), backward)


def _tap_slices(shape: tuple[int, ...]) -> list[tuple[slice, ...]]:
    # Windows into a wrap-padded array; tap k reads x[(n + k - 1) mod size]
    spatial = len(shape)
    return [
        (slice(None), slice(None)) + tuple(slice(o, o + size) for o, size in zip(offset, shape))
        for offset in itertools.product(range(3), repeat=spatial)
    ]


def circular_conv(x, weight, bias) -> Tensor:
    """
    Circular cross-correlation with kernel size 3 along every spatial axis.

    Args:
        x: Input of shape (batch, in_channels, *spatial).
        weight: Kernel of shape (out_channels, in_channels, 3, ...).
        bias: Shape (out_channels,).

    Returns:
        Tensor: Shape (batch, out_channels, *spatial) with
        out[b, o, n] = bias[o] + sum_{c, k} weight[o, c, k] * x[b, c, (n + k - 1) mod size].
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    spatial = x.ndim - 2
    out_channels, in_channels = weight.shape[:2]
    taps = _tap_slices(x.shape[2:])
    kernels = weight.data.reshape(out_channels, in_channels, len(taps))
    padded = np.pad(x.data, [(0, 0), (0, 0)] + [(1, 1)] * spatial, mode="wrap")

    out = np.zeros((x.shape[0], out_channels) + x.shape[2:])
    for k, window in enumerate(taps):
        out += np.einsum("oc,bc...->bo...", kernels[:, :, k], padded[window], optimize=True)
    out += bias.data.reshape((1, out_channels) + (1,) * spatial)

    def backward(grad):
        grad_axes = (0,) + tuple(range(2, grad.ndim))
        grad_kernels = np.empty_like(kernels)
        grad_padded = np.zeros_like(padded)
        for k, window in enumerate(taps):
            grad_kernels[:, :, k] = np.tensordot(grad, padded[window], axes=(grad_axes, grad_axes))
            grad_padded[window] += np.einsum("oc,bo...->bc...", kernels[:, :, k], grad, optimize=True)
        return _fold_wrap(grad_padded, spatial), grad_kernels.reshape(weight.shape), grad.sum(axis=grad_axes)

    return Tensor.from_op(out, (x, weight, bias), backward)


def _fold_wrap(padded: np.ndarray, spatial: int) -> np.ndarray:
    """Adds the one-wide halo of a wrap-padded gradient back onto the opposite edges."""
    for axis in range(2, 2 + spatial):
        core = np.take(padded, np.arange(1, padded.shape[axis] - 1), axis=axis)
        first = np.take(padded, [0], axis=axis)
        last = np.take(padded, [padded.shape[axis] - 1], axis=axis)
        edge_lo = [slice(None)] * padded.ndim
        edge_hi = [slice(None)] * padded.ndim
        edge_lo[axis] = slice(0, 1)
        edge_hi[axis] = slice(-1, None)
        core[tuple(edge_hi)] += first
        core[tuple(edge_lo)] += last
        padded = core
    return padded
