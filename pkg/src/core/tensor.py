"""
Dense float tensors and a define-by-run reverse-mode autodiff tape

A `Tape` is built fresh for every forward pass. Parameters are bound to the
tape by name through `Tape.param`; when the same parameter is used at several
sites (tied encoder/decoder weights) `backward` returns the sum of every
site's contribution.
"""
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import kernels
from .errors import ContractViolation, DimensionError

logger = logging.getLogger(__name__)

Array = np.ndarray
BackwardFn = Callable[[Array], Sequence[Optional[Array]]]

_DEBUG_FINITE = os.getenv("LMSER_DEBUG", "").lower() in ("1", "true", "yes")
_DTYPE = np.float32


def set_debug(enabled: bool) -> None:
    """Assert every produced value is finite (slow)"""
    global _DEBUG_FINITE
    _DEBUG_FINITE = enabled


@contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the working float type (float64 for gradient checks)"""
    global _DTYPE
    previous, _DTYPE = _DTYPE, np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = previous


class Tensor:
    """Immutable row-major float array (float32 unless switched), optionally tracked on a tape"""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: Optional["Tape"] = None, node: Optional[int] = None):
        if isinstance(data, np.ndarray) and data.dtype == _DTYPE and not data.flags.writeable:
            arr = data.view()
        else:
            # caller keeps its buffer; the tensor owns a private copy
            arr = np.array(data, dtype=_DTYPE)
        arr.flags.writeable = False
        if _DEBUG_FINITE and not np.isfinite(arr).all():
            raise ContractViolation(f"non-finite values in tensor of shape {arr.shape}")
        self.data = arr
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        tracked = f", node={self.node}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{tracked})"


@dataclass
class TapeNode:
    inputs: Tuple[int, ...]
    value: Array
    backward: Optional[BackwardFn] = None


@dataclass
class Tape:
    """Append-only record of operations in execution order"""

    nodes: List[TapeNode] = field(default_factory=list)
    bindings: Dict[int, str] = field(default_factory=dict)
    _param_nodes: Dict[str, int] = field(default_factory=dict)

    def leaf(self, value, name: Optional[str] = None) -> Tensor:
        tensor = value if isinstance(value, Tensor) else Tensor(value)
        self.nodes.append(TapeNode(inputs=(), value=tensor.data))
        node_id = len(self.nodes) - 1
        if name is not None:
            self.bindings[node_id] = name
        return Tensor(tensor.data, tape=self, node=node_id)

    def param(self, name: str, value) -> Tensor:
        """Leaf for a named parameter, created once per tape"""
        node_id = self._param_nodes.get(name)
        if node_id is not None:
            return Tensor(self.nodes[node_id].value, tape=self, node=node_id)
        tensor = self.leaf(value, name=name)
        self._param_nodes[name] = tensor.node
        return tensor

    def record(self, value: Array, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
        ids = []
        for t in inputs:
            if t.tape is not self:
                t = self.leaf(t)
            ids.append(t.node)
        self.nodes.append(TapeNode(inputs=tuple(ids), value=value, backward=backward))
        return Tensor(value, tape=self, node=len(self.nodes) - 1)

    def backward(self, loss: Tensor) -> Dict[str, Tensor]:
        return backward(self, loss)


def backward(tape: Tape, loss: Tensor) -> Dict[str, Tensor]:
    """Reverse sweep from a scalar loss; returns gradients by parameter name"""
    if loss.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: List[Optional[Array]] = [None] * len(tape.nodes)
    if loss.tape is tape:
        grads[loss.node] = np.ones_like(loss.data)

    for idx in range(len(tape.nodes) - 1, -1, -1):
        node = tape.nodes[idx]
        g = grads[idx]
        if g is None or node.backward is None:
            continue
        for inp, ig in zip(node.inputs, node.backward(g)):
            if ig is None:
                continue
            grads[inp] = ig if grads[inp] is None else grads[inp] + ig

    result: Dict[str, Array] = {}
    for node_id, name in tape.bindings.items():
        g = grads[node_id]
        if g is None:
            g = np.zeros_like(tape.nodes[node_id].value)
        result[name] = result[name] + g if name in result else g
    return {name: Tensor(g) for name, g in result.items()}


def _tape_of(*tensors: Tensor) -> Optional[Tape]:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is not None and t.tape is not tape:
            raise ContractViolation("operands are recorded on different tapes")
        tape = t.tape
    return tape


def _apply(value: Array, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    value = np.asarray(value, dtype=_DTYPE)
    value.flags.writeable = False
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(value)
    out = tape.record(value, inputs, backward_fn)
    if _DEBUG_FINITE and not np.isfinite(value).all():
        raise ContractViolation(f"non-finite values produced at tape node {out.node}")
    return out


def as_tensor(value: Union[Tensor, Array, float, Sequence]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(g: Array, shape: Tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to `shape`"""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# linear algebra and shape ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("matmul inner dimensions disagree", a.shape, b.shape)
    av, bv = a.data, b.data
    return _apply(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError("transpose needs a matrix", a.shape)
    return _apply(a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        value = a.data.reshape(shape)
    except ValueError as e:
        raise DimensionError("cannot reshape", src, shape) from e
    return _apply(value, (a,), lambda g: (g.reshape(src),))


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    """a[..., start:stop]"""
    a = as_tensor(a)
    src = a.shape

    def grad(g):
        full = np.zeros(src, dtype=g.dtype)
        full[..., start:stop] = g
        return (full,)

    return _apply(a.data[..., start:stop], (a,), grad)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = a.data + b.data
    except ValueError as e:
        raise DimensionError("add operands do not broadcast", a.shape, b.shape) from e
    sa, sb = a.shape, b.shape
    return _apply(value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def scale(a: Tensor, factor: float) -> Tensor:
    a = as_tensor(a)
    f = a.data.dtype.type(factor)
    return _apply(a.data * f, (a,), lambda g: (g * f,))


# ---------------------------------------------------------------------------
# activations

def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _apply(np.where(mask, x.data, np.float32(0)), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = np.float32(0.5) * (np.float32(1) + np.tanh(np.float32(0.5) * x.data))
    return _apply(s, (x,), lambda g: (g * s * (np.float32(1) - s),))


def identity(x: Tensor) -> Tensor:
    return as_tensor(x)


ACTIVATIONS: Dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "sigmoid": sigmoid,
    "linear": identity,
}


# ---------------------------------------------------------------------------
# convolution

def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [c_in, h, w] (or a batch [n, c_in, h, w])"""
    x, kernel = as_tensor(x), as_tensor(kernel)
    single = x.data.ndim == 3
    xv = x.data[None] if single else x.data
    kv = kernel.data
    _, _, kh, kw = kv.shape if kv.ndim == 4 else (0, 0, 0, 0)
    out = kernels.conv2d(xv, kv, stride, padding)
    hw = xv.shape[2:]

    def grad(g):
        g4 = g[None] if single else g
        gx = kernels.conv2d_transpose(g4, kv, stride, padding, out_hw=hw)
        gk = kernels.conv2d_kernel_grad(xv, g4, kh, kw, stride, padding)
        return (gx[0] if single else gx, gk)

    return _apply(out[0] if single else out, (x, kernel), grad)


def conv2d_transpose(g: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0,
                     out_hw: Optional[Tuple[int, int]] = None) -> Tensor:
    """Exact adjoint of `conv2d` with the same kernel, stride and padding"""
    g, kernel = as_tensor(g), as_tensor(kernel)
    single = g.data.ndim == 3
    gv = g.data[None] if single else g.data
    kv = kernel.data
    out = kernels.conv2d_transpose(gv, kv, stride, padding, out_hw=out_hw)
    kh, kw = kv.shape[2:]

    def grad(dout):
        d4 = dout[None] if single else dout
        dg = kernels.conv2d(d4, kv, stride, padding)
        dk = kernels.conv2d_kernel_grad(d4, gv, kh, kw, stride, padding)
        return (dg[0] if single else dg, dk)

    return _apply(out[0] if single else out, (g, kernel), grad)


# ---------------------------------------------------------------------------
# losses

def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of softmax(logits) against integer labels"""
    logits = as_tensor(logits)
    single = logits.data.ndim == 1
    lv = logits.data[None] if single else logits.data
    if lv.ndim != 2:
        raise DimensionError("logits must be [n_classes] or [batch, n_classes]", logits.shape)
    n, n_classes = lv.shape
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if lab.shape != (n,):
        raise DimensionError("one label per logit row required", lab.shape, (n,))
    if lab.size and (lab.min() < 0 or lab.max() >= n_classes):
        raise IndexError(f"label out of range [0, {n_classes}): {lab.tolist()}")

    shifted = lv - lv.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    loss = -log_p[np.arange(n), lab].mean()

    def grad(g):
        d = np.exp(log_p)
        d[np.arange(n), lab] -= 1.0
        d = (d * (g / n)).astype(lv.dtype)
        return (d[0] if single else d,)

    return _apply(loss, (logits,), grad)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean over all elements of (a - b)^2"""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError("mse operands differ in shape", a.shape, b.shape)
    diff = a.data - b.data
    n = diff.size

    def grad(g):
        d = (diff.dtype.type(2.0 / n) * g * diff).astype(diff.dtype)
        return (d, -d)

    return _apply(np.mean(diff * diff, dtype=np.float64), (a, b), grad)
