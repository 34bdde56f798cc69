"""
Tape-based reverse-mode differentiation over dense float64 arrays

Every primitive evaluates eagerly with numpy and, when the tape is enabled,
records its value together with a vector-Jacobian product closure. The
backward pass walks the recorded nodes once, in reverse topological order.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.config import settings
from src.core.exceptions import NonFiniteError, ShapeMismatchError, TapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]


@dataclass
class _Node:
    """One recorded primitive"""
    op: str
    value: np.ndarray
    parents: Tuple[int, ...]
    vjp: Optional[Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]]
    name: Optional[str] = None


@dataclass
class Tape:
    """
    Ordered record of primitive evaluations.

    A disabled tape still evaluates primitives but keeps nothing, which is
    how inference paths (rollouts, target networks) avoid graph memory.
    """
    enabled: bool = True
    check_finite: bool = settings.FINITE_CHECKS
    nodes: List[_Node] = field(default_factory=list)
    watched: Dict[str, Tuple[int, object]] = field(default_factory=dict)

    def record(self, op: str, value: np.ndarray, parents: Tuple["Tensor", ...],
               vjp: Optional[Callable] = None, name: Optional[str] = None) -> "Tensor":
        """
        Append a node and wrap its value

        Args:
            op: Primitive name (reported in diagnostics)
            value: Computed value
            parents: Input tensors
            vjp: Maps the output cotangent to one cotangent per parent
            name: Optional label for leaves

        Returns:
            Tensor bound to the new node
        """
        value = np.asarray(value, dtype=np.float64)
        if self.check_finite and not np.all(np.isfinite(value)):
            index = len(self.nodes) if self.enabled else -1
            raise NonFiniteError(f"non-finite value at node {index} ({op})")
        if not self.enabled:
            return Tensor(self, -1, value)
        for parent in parents:
            if parent.tape is not self:
                raise TapeError(f"operand of {op} belongs to another tape")
        index = len(self.nodes)
        self.nodes.append(_Node(op, value, tuple(p.index for p in parents), vjp, name))
        return Tensor(self, index, value)

    def constant(self, data: ArrayLike, name: Optional[str] = None) -> "Tensor":
        """Leaf that never receives a gradient of interest"""
        return self.record("const", np.array(data, dtype=np.float64), (), None, name)

    def leaf(self, data: ArrayLike, name: Optional[str] = None) -> "Tensor":
        """Differentiable input"""
        return self.record("leaf", np.array(data, dtype=np.float64), (), None, name)

    def watch(self, params, name: Optional[str] = None) -> "Tensor":
        """
        Register a ParamVector as a differentiable leaf

        Args:
            params: ParamVector whose flat data becomes the leaf value
            name: Key under which backward() reports the gradient

        Returns:
            Flat leaf tensor
        """
        key = name or params.layout.arch
        tensor = self.leaf(params.data, key)
        if self.enabled:
            self.watched[key] = (tensor.index, params)
        return tensor

    def __len__(self) -> int:
        return len(self.nodes)


class Tensor:
    """Value handle bound to a tape node"""

    __array_priority__ = 100
    __array_ufunc__ = None

    def __init__(self, tape: Tape, index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def data(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.index})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __getitem__(self, index): return take(self, index)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None) -> "Tensor":
        return sum_(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return mean(self, axis)


# ==================== Helpers ====================

def _lift(tape: Tape, x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return tape.constant(x)


def _tape_of(*operands) -> Tape:
    for operand in operands:
        if isinstance(operand, Tensor):
            return operand.tape
    raise TapeError("primitive called without any tensor operand")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast cotangent back to an operand shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: np.ndarray, b: np.ndarray) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def _unary(op: str, x: Tensor, value: np.ndarray, local_grad: Callable[[], np.ndarray]) -> Tensor:
    def vjp(g):
        return (g * local_grad(),)
    return x.tape.record(op, value, (x,), vjp)


# ==================== Elementwise binary ====================

def add(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _broadcast_shape("add", a.value, b.value)
    sa, sb = a.shape, b.shape
    return tape.record("add", a.value + b.value, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _broadcast_shape("sub", a.value, b.value)
    sa, sb = a.shape, b.shape
    return tape.record("sub", a.value - b.value, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _broadcast_shape("mul", a.value, b.value)
    av, bv = a.value, b.value
    return tape.record("mul", av * bv, (a, b),
                       lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _broadcast_shape("div", a.value, b.value)
    av, bv = a.value, b.value
    out = av / bv
    return tape.record("div", out, (a, b),
                       lambda g: (_unbroadcast(g / bv, av.shape),
                                  _unbroadcast(-g * out / bv, bv.shape)))


def neg(x: Tensor) -> Tensor:
    return x.tape.record("neg", -x.value, (x,), lambda g: (-g,))


# ==================== Elementwise unary ====================

def sin(x: Tensor) -> Tensor:
    return _unary("sin", x, np.sin(x.value), lambda: np.cos(x.value))


def cos(x: Tensor) -> Tensor:
    return _unary("cos", x, np.cos(x.value), lambda: -np.sin(x.value))


def relu(x: Tensor) -> Tensor:
    return _unary("relu", x, np.maximum(x.value, 0.0), lambda: (x.value > 0.0).astype(np.float64))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.value)
    return _unary("exp", x, out, lambda: out)


def log(x: Tensor) -> Tensor:
    return _unary("log", x, np.log(x.value), lambda: 1.0 / x.value)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.value)
    return _unary("tanh", x, out, lambda: 1.0 - out * out)


def square(x: Tensor) -> Tensor:
    return _unary("square", x, x.value * x.value, lambda: 2.0 * x.value)


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.value)
    return _unary("sqrt", x, out, lambda: 0.5 / out)


def abs_(x: Tensor) -> Tensor:
    return _unary("abs", x, np.abs(x.value), lambda: np.sign(x.value))


def softplus(x: Tensor) -> Tensor:
    v = x.value
    out = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
    return _unary("softplus", x, out, lambda: 0.5 * (1.0 + np.tanh(0.5 * v)))


def clip(x: Tensor, low: float, high: float) -> Tensor:
    """Clamp with zero gradient outside [low, high]"""
    v = x.value
    inside = ((v >= low) & (v <= high)).astype(np.float64)
    return _unary("clip", x, np.clip(v, low, high), lambda: inside)


def maximum(x: Tensor, floor: float) -> Tensor:
    """max(x, floor) against a constant; the gradient goes to x where x > floor"""
    v = x.value
    return _unary("maximum", x, np.maximum(v, floor), lambda: (v > floor).astype(np.float64))


def stop_gradient(x: Tensor) -> Tensor:
    return x.tape.constant(x.value)


# ==================== Linear algebra ====================

def matmul(a, b) -> Tensor:
    """
    Matrix product for the shapes the fixed architectures need:
    (..., n) @ (n, m), (..., n) @ (n,), (n,) @ (n, m)
    """
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    if bv.ndim not in (1, 2) or av.ndim < 1 or av.shape[-1] != bv.shape[0]:
        raise ShapeMismatchError(f"matmul: shapes {av.shape} and {bv.shape} are incompatible")
    out = av @ bv

    def vjp(g):
        if bv.ndim == 1:
            ga = g[..., None] * bv
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1)
        elif av.ndim == 1:
            ga = bv @ g
            gb = np.outer(av, g)
        else:
            ga = g @ bv.T
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, bv.shape[1])
        return ga, gb

    return tape.record("matmul", out, (a, b), vjp)


def dot(a, b) -> Tensor:
    """Inner product along the last axis"""
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.shape[-1:] != b.shape[-1:]:
        raise ShapeMismatchError(f"dot: shapes {a.shape} and {b.shape} are incompatible")
    _broadcast_shape("dot", a.value, b.value)
    av, bv = a.value, b.value
    return tape.record("dot", np.sum(av * bv, axis=-1), (a, b),
                       lambda g: (_unbroadcast(g[..., None] * bv, av.shape),
                                  _unbroadcast(g[..., None] * av, bv.shape)))


# ==================== Reductions ====================

def _normalize_axes(axis, ndim) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum_(x: Tensor, axis=None) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    shape = x.shape

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axes), shape).copy(),)

    return x.tape.record("sum", np.sum(x.value, axis=axes), (x,), vjp)


def mean(x: Tensor, axis=None) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    shape = x.shape

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axes), shape) / count,)

    return x.tape.record("mean", np.mean(x.value, axis=axes), (x,), vjp)


def max_(x: Tensor, axis: int) -> Tensor:
    """Max reduction; the cotangent flows to the first maximal entry"""
    axis = axis % x.ndim
    arg = np.argmax(x.value, axis=axis)
    out = np.take_along_axis(x.value, np.expand_dims(arg, axis), axis=axis).squeeze(axis)
    shape = x.shape

    def vjp(g):
        grad = np.zeros(shape)
        np.put_along_axis(grad, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return x.tape.record("max", out, (x,), vjp)


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    """Stable log-sum-exp with max subtraction"""
    v = x.value
    peak = np.max(v, axis=axis, keepdims=True)
    shifted = np.exp(v - peak)
    total = np.sum(shifted, axis=axis, keepdims=True)
    out = (np.log(total) + peak).squeeze(axis)
    weights = shifted / total

    def vjp(g):
        return (np.expand_dims(g, axis) * weights,)

    return x.tape.record("logsumexp", out, (x,), vjp)


# ==================== Structure ====================

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        out = x.value.reshape(shape)
    except ValueError:
        raise ShapeMismatchError(f"reshape: cannot view {old} as {tuple(shape)}")
    return x.tape.record("reshape", out, (x,), lambda g: (g.reshape(old),))


def take(x: Tensor, index) -> Tensor:
    """Basic or integer-array indexing"""
    shape = x.shape
    out = x.value[index]

    def vjp(g):
        grad = np.zeros(shape)
        np.add.at(grad, index, g)
        return (grad,)

    return x.tape.record("take", np.array(out), (x,), vjp)


def transpose(x: Tensor) -> Tensor:
    return x.tape.record("transpose", x.value.T, (x,), lambda g: (g.T,))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tape = _tape_of(*tensors)
    parts = [_lift(tape, t) for t in tensors]
    try:
        out = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError as e:
        raise ShapeMismatchError(f"concat: {e}")
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return tape.record("concat", out, tuple(parts), vjp)


def broadcast_rows(x: Tensor, rows: int) -> Tensor:
    """Repeat a vector as the rows of a (rows, n) matrix"""
    out = np.broadcast_to(x.value, (rows,) + x.shape).copy()
    return x.tape.record("broadcast", out, (x,), lambda g: (g.sum(axis=0),))


# ==================== Graph driving ====================

def forward(tape: Tape, graph: Callable[..., Tensor], inputs: Sequence[ArrayLike]) -> Tensor:
    """
    Evaluate a graph description on the tape

    Args:
        tape: Tape that records the evaluation
        graph: Callable building the output from input tensors with primitives
        inputs: Input arrays, registered as differentiable leaves

    Returns:
        Output tensor
    """
    leaves = [x if isinstance(x, Tensor) else tape.leaf(x) for x in inputs]
    out = graph(*leaves)
    if not isinstance(out, Tensor):
        raise TapeError("graph must return a Tensor")
    return out


def backward(tape: Tape, output: Tensor, wrt: Sequence[Tensor] = ()) -> Dict:
    """
    Reverse pass from a scalar output

    Args:
        tape: Tape holding the forward evaluation
        output: Scalar tensor recorded on this tape
        wrt: Extra leaf tensors whose gradients are requested

    Returns:
        Dict mapping each watched ParamVector name to a gradient ParamVector,
        and each tensor in ``wrt`` (by its node index) to a gradient array
    """
    if not tape.enabled:
        raise TapeError("backward on a disabled tape")
    if output.tape is not tape or output.index < 0 or not tape.nodes:
        raise TapeError("backward before forward: output not recorded on this tape")
    if output.value.size != 1:
        raise TapeError(f"backward needs a scalar output, got shape {output.shape}")

    grads: List[Optional[np.ndarray]] = [None] * (output.index + 1)
    grads[output.index] = np.ones_like(output.value)
    for index in range(output.index, -1, -1):
        g = grads[index]
        node = tape.nodes[index]
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None:
                continue
            if grads[parent] is None:
                grads[parent] = np.array(pg, dtype=np.float64)
            else:
                grads[parent] = grads[parent] + pg

    result: Dict = {}
    for key, (index, params) in tape.watched.items():
        g = grads[index] if index < len(grads) else None
        result[key] = params.like(np.zeros(params.data.shape) if g is None else g)
    for tensor in wrt:
        g = grads[tensor.index] if 0 <= tensor.index < len(grads) else None
        result[tensor.index] = np.zeros(tensor.shape) if g is None else g
    return result
