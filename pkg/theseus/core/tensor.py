#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Theseus - Tensor Engine
=======================

Minimal deterministic reverse-mode automatic differentiation over 64-bit
numpy arrays.

Primitives record themselves on the active Tape when any input requires a
gradient. Frozen tensors never receive a gradient buffer, but gradients still
flow through the activations they help compute, so trainable tensors upstream
of a frozen block are reached.
"""

import contextlib
import logging
import threading
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import GRAD_CHECK_EPS, GRAD_CHECK_FLOOR, LAYER_NORM_EPS
from .errors import (
    DimensionError,
    IndexRangeError,
    NumericError,
    ParameterError,
    TapeError,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence[Any], float, int]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """
    n-dimensional float64 array with an optional gradient buffer.

    Parameters are created with ``requires_grad=True``. Setting ``frozen``
    turns a parameter into a constant: its grad buffer is dropped and
    optimizers skip it.
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        frozen: bool = False,
        name: Optional[str] = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad and not frozen
        self._frozen = frozen
        self.name = name
        self.retain_grad = False

    @classmethod
    def parameter(cls, data: ArrayLike, name: Optional[str] = None) -> "Tensor":
        """Create a trainable leaf tensor owning a copy of ``data``."""
        return cls(np.array(data, dtype=np.float64), requires_grad=True, name=name)

    @property
    def shape(self) -> List[int]:
        return list(self.data.shape)

    @property
    def frozen(self) -> bool:
        return self._frozen

    @frozen.setter
    def frozen(self, value: bool) -> None:
        self._frozen = bool(value)
        self.requires_grad = not self._frozen
        if self._frozen:
            self.grad = None

    def zero_grad(self) -> None:
        """Reset the grad buffer to zeros; frozen tensors keep none."""
        if self._frozen or not self.requires_grad:
            self.grad = None
            return
        self.grad = np.zeros_like(self.data)

    def copy(self) -> "Tensor":
        """Deep copy of data and flags (the grad buffer is not copied)."""
        clone = Tensor(self.data.copy(), requires_grad=self.requires_grad, frozen=self._frozen, name=self.name)
        return clone

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError("item", self.shape, detail="tensor is not a scalar")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __repr__(self) -> str:
        flags = "frozen" if self._frozen else ("grad" if self.requires_grad else "const")
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, {flags}{label})"


class _Node:
    """One recorded primitive application."""

    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward_fn: BackwardFn):
        self.op = op
        self.inputs = list(inputs)
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """
    Ordered record of primitive applications for one forward pass.

    Use as a context manager to make it the active tape of the current
    thread. Each training run owns its tape; tapes are never shared across
    threads.
    """

    def __init__(self, check_finite: bool = False):
        self.check_finite = check_finite
        self.nodes: List[_Node] = []
        self._produced: Dict[int, int] = {}
        self._leaves: Dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: _Node) -> None:
        self._produced[id(node.output)] = len(self.nodes)
        self.nodes.append(node)
        for tensor in node.inputs:
            if id(tensor) not in self._produced and tensor.requires_grad:
                self._leaves[id(tensor)] = tensor

    def produced(self, tensor: Tensor) -> bool:
        return id(tensor) in self._produced

    def leaves(self) -> List[Tensor]:
        """Trainable leaf tensors that fed any recorded primitive."""
        return list(self._leaves.values())

    def clear(self) -> None:
        """Drop all records and reset the grads of recorded trainable leaves."""
        for tensor in self._leaves.values():
            tensor.zero_grad()
        self.nodes = []
        self._produced = {}
        self._leaves = {}

    def backward(self, loss: Tensor) -> None:
        """
        Propagate d(loss)/d(tensor) to every reachable trainable tensor.

        Gradients accumulate into leaf ``grad`` buffers; intermediate tensors
        keep theirs only when ``retain_grad`` is set.
        """
        if loss.data.size != 1:
            raise DimensionError("backward", loss.shape, detail="loss must be a scalar")
        end = self._produced.get(id(loss))
        if end is None:
            raise TapeError("backward: loss tensor was not produced on this tape")

        pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes[: end + 1]):
            grad_out = pending.pop(id(node.output), None)
            if grad_out is None:
                continue
            if node.output.retain_grad:
                node.output.grad = grad_out.copy()
            input_grads = node.backward_fn(grad_out)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in self._produced:
                    if key in pending:
                        pending[key] = pending[key] + grad
                    else:
                        pending[key] = grad
                elif not tensor.frozen:
                    if tensor.grad is None:
                        tensor.grad = np.array(grad, dtype=np.float64)
                    else:
                        tensor.grad = tensor.grad + grad
        logger.debug(f"backward visited {end + 1} recorded nodes")


_local = threading.local()


def _tape_stack() -> List[Optional[Tape]]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Optional[Tape]:
    """The innermost active tape of this thread, or None inside no_grad()."""
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording for the enclosed block."""
    stack = _tape_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


def _emit(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn: BackwardFn) -> Tensor:
    tape = active_tape()
    if tape is not None and tape.check_finite and not np.all(np.isfinite(out_data)):
        raise NumericError(f"{op}: non-finite values in output")
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs_grad)
    if needs_grad:
        tape.record(_Node(op, inputs, out, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise DimensionError(op, a.shape, b.shape, detail="shapes do not broadcast") from None


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes (leading axes broadcast)."""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError("matmul", a.shape, b.shape, detail="inner dimensions differ")
    try:
        np.broadcast_shapes(a.data.shape[:-2], b.data.shape[:-2])
    except ValueError:
        raise DimensionError("matmul", a.shape, b.shape, detail="batch dimensions do not broadcast") from None
    a_data, b_data = a.data, b.data

    def backward(g: np.ndarray):
        ga = g @ np.swapaxes(b_data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a_data, -1, -2) @ g if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a_data.shape),
            None if gb is None else _unbroadcast(gb, b_data.shape),
        )

    return _emit("matmul", (a, b), a_data @ b_data, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)
    a_shape, b_shape = a.data.shape, b.data.shape

    def backward(g: np.ndarray):
        return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

    return _emit("add", (a, b), a.data + b.data, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with broadcasting."""
    _broadcast_shape("mul", a, b)
    a_data, b_data = a.data, b.data

    def backward(g: np.ndarray):
        return _unbroadcast(g * b_data, a_data.shape), _unbroadcast(g * a_data, b_data.shape)

    return _emit("mul", (a, b), a_data * b_data, backward)


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def backward(g: np.ndarray):
        return (g * factor,)

    return _emit("scale", (x,), x.data * factor, backward)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh approximation of the Gaussian error linear unit."""
    x_data = x.data
    inner = _GELU_C * (x_data + 0.044715 * x_data ** 3)
    t = np.tanh(inner)

    def backward(g: np.ndarray):
        d_inner = _GELU_C * (1.0 + 3.0 * 0.044715 * x_data ** 2)
        local = 0.5 * (1.0 + t) + 0.5 * x_data * (1.0 - t * t) * d_inner
        return (g * local,)

    return _emit("gelu", (x,), 0.5 * x_data * (1.0 + t), backward)


def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Softmax with max-subtraction.

    ``mask`` broadcasts against ``x``; False entries get -inf logits and a
    probability of exactly zero. Rows with every entry masked yield zeros.
    """
    logits = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        try:
            np.broadcast_shapes(mask.shape, logits.shape)
        except ValueError:
            raise DimensionError("softmax", x.shape, mask.shape, detail="mask does not broadcast") from None
        logits = np.where(mask, logits, -np.inf)
    peak = np.max(logits, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    exps = np.exp(logits - peak)
    total = np.sum(exps, axis=axis, keepdims=True)
    probs = exps / np.where(total > 0.0, total, 1.0)

    def backward(g: np.ndarray):
        return (probs * (g - np.sum(g * probs, axis=axis, keepdims=True)),)

    return _emit("softmax", (x,), probs, backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis with population variance, then apply gain and bias."""
    width = x.data.shape[-1] if x.data.ndim else 0
    if gain.data.shape != (width,) or bias.data.shape != (width,):
        raise DimensionError("layer_norm", x.shape, gain.shape, bias.shape, detail="gain/bias must match last axis")
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    normed = centered * inv_std
    gain_data = gain.data

    def backward(g: np.ndarray):
        g_gain = np.sum(g * normed, axis=tuple(range(g.ndim - 1))) if gain.requires_grad else None
        g_bias = np.sum(g, axis=tuple(range(g.ndim - 1))) if bias.requires_grad else None
        g_normed = g * gain_data
        g_x = inv_std * (
            g_normed
            - g_normed.mean(axis=-1, keepdims=True)
            - normed * np.mean(g_normed * normed, axis=-1, keepdims=True)
        )
        return g_x, g_gain, g_bias

    return _emit("layer_norm", (x, gain, bias), normed * gain_data + bias.data, backward)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a [rows x width] table; output shape is ids.shape + [width]."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise DimensionError("embedding_lookup", table.shape, detail="table must be 2-D")
    rows = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= rows):
        raise IndexRangeError(f"embedding_lookup: ids must lie in [0, {rows}), got range [{ids.min()}, {ids.max()}]")
    table_shape = table.data.shape

    def backward(g: np.ndarray):
        g_table = np.zeros(table_shape, dtype=np.float64)
        np.add.at(g_table, ids, g)
        return (g_table,)

    return _emit("embedding_lookup", (table,), table.data[ids], backward)


def concat_rows(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis`` (rows by default)."""
    if not tensors:
        raise DimensionError("concat-rows", detail="no inputs")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError("concat-rows", *[t.shape for t in tensors]) from None
    bounds = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def backward(g: np.ndarray):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit("concat-rows", tuple(tensors), out, backward)


def dropout_mask_apply(x: Tensor, keep: np.ndarray, rate: float) -> Tensor:
    """Apply a precomputed keep-mask with inverted-dropout scaling."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    keep = np.asarray(keep, dtype=np.float64)
    try:
        np.broadcast_shapes(keep.shape, x.data.shape)
    except ValueError:
        raise DimensionError("dropout-mask-apply", x.shape, keep.shape) from None
    factor = keep / (1.0 - rate)

    def backward(g: np.ndarray):
        return (_unbroadcast(g * factor, x.data.shape),)

    return _emit("dropout-mask-apply", (x,), x.data * factor, backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.data.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError("reshape", x.shape, list(shape)) from None

    def backward(g: np.ndarray):
        return (g.reshape(original),)

    return _emit("reshape", (x,), out, backward)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.data.ndim)):
        raise DimensionError("transpose", x.shape, list(axes), detail="axes must permute all dimensions")
    inverse = tuple(np.argsort(axes))

    def backward(g: np.ndarray):
        return (np.transpose(g, inverse),)

    return _emit("transpose", (x,), np.transpose(x.data, axes), backward)


def take(x: Tensor, index: int, axis: int) -> Tensor:
    """Select one index along ``axis``, dropping that axis."""
    if not -x.data.shape[axis] <= index < x.data.shape[axis]:
        raise DimensionError("take", x.shape, detail=f"index {index} out of range on axis {axis}")
    original = x.data.shape
    slicer: List[Any] = [slice(None)] * x.data.ndim
    slicer[axis] = index

    def backward(g: np.ndarray):
        full = np.zeros(original, dtype=np.float64)
        full[tuple(slicer)] = g
        return (full,)

    return _emit("take", (x,), x.data[tuple(slicer)], backward)


def sum(x: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    original = x.data.shape

    def backward(g: np.ndarray):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, original).copy(),)

    return _emit("sum", (x,), np.asarray(np.sum(x.data, axis=axis)), backward)


_PRIMITIVES: Dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "scale": scale,
    "gelu": gelu,
    "softmax": softmax,
    "layer_norm": layer_norm,
    "embedding_lookup": embedding_lookup,
    "concat-rows": concat_rows,
    "dropout-mask-apply": dropout_mask_apply,
    "reshape": reshape,
    "transpose": transpose,
    "take": take,
    "sum": sum,
}


def primitive_forward(op: str, inputs: Sequence[Tensor], **attrs: Any) -> Tensor:
    """Dispatch a primitive by name; ``attrs`` are op-specific scalars or arrays."""
    try:
        fn = _PRIMITIVES[op]
    except KeyError:
        raise ParameterError(f"unknown primitive {op!r}; known: {', '.join(sorted(_PRIMITIVES))}") from None
    if op == "concat-rows":
        return fn(list(inputs), **attrs)
    return fn(*inputs, **attrs)


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or logits.data.shape[0] < 1:
        raise DimensionError("cross_entropy", logits.shape, detail="logits must be [batch x classes], batch >= 1")
    batch, classes = logits.data.shape
    if labels.shape != (batch,):
        raise DimensionError("cross_entropy", logits.shape, labels.shape, detail="one label per row")
    if labels.min() < 0 or labels.max() >= classes:
        raise IndexRangeError(f"cross_entropy: labels must lie in [0, {classes}), got {labels.tolist()}")
    peak = logits.data.max(axis=1, keepdims=True)
    shifted = logits.data - peak
    log_norm = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(batch)
    loss = -np.mean(log_probs[rows, labels])

    def backward(g: np.ndarray):
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1.0
        return (grad * (float(g) / batch),)

    return _emit("cross_entropy", (logits,), np.asarray(loss), backward)


def backward(loss: Tensor, tape: Optional[Tape] = None) -> None:
    """Run reverse accumulation from ``loss`` on ``tape`` (default: the active tape)."""
    tape = tape or active_tape()
    if tape is None:
        raise TapeError("backward: no active tape")
    tape.backward(loss)


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = GRAD_CHECK_EPS,
    n_coords: int = 100,
    seed: int = 0,
) -> float:
    """
    Compare analytic gradients with central finite differences.

    Args:
        f: Zero-argument callable building a scalar loss from ``params``
        params: Trainable tensors to probe
        eps: Finite-difference step
        n_coords: Number of coordinates to probe (all when fewer exist)
        seed: Seed for coordinate sampling

    Returns:
        Maximum relative error over the probed coordinates
    """
    for p in params:
        if p.frozen or not p.requires_grad:
            raise ParameterError(f"grad_check: parameter {p.name or p.shape} is not trainable")
        p.zero_grad()
    with Tape() as tape:
        loss = f()
        tape.backward(loss)
    analytic = [p.grad.copy() for p in params]

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.data.size)]
    if len(coords) > n_coords:
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[k] for k in sorted(picked)]

    worst = 0.0
    with no_grad():
        for i, j in coords:
            data = params[i].data
            where = np.unravel_index(j, data.shape)
            original = data[where]
            data[where] = original + eps
            plus = f().item()
            data[where] = original - eps
            minus = f().item()
            data[where] = original
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise NumericError(f"grad_check: non-finite loss while probing {params[i].name or i}[{j}]")
            numeric = (plus - minus) / (2.0 * eps)
            exact = analytic[i][where]
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), GRAD_CHECK_FLOOR)
            worst = max(worst, error)
    logger.debug(f"grad_check probed {len(coords)} coordinates, max relative error {worst:.3e}")
    return worst
