"""
Dense float64 tensors with define-by-run reverse-mode autodiff.

Gradients are only tracked inside an explicit tape:

    with Tape() as tape:
        loss = mean(square(matmul(x, w)))
    tape.backward(loss)
    w.grad

Outside a tape every primitive is a plain forward computation. Tensors are
immutable once created; only the lazily allocated ``grad`` buffer of a leaf
changes, and it accumulates across backward passes until ``zero_grad``.
"""
from dataclasses import dataclass, field
import math
import threading
from typing import Callable, List, Optional, Sequence

import numpy as np

from matting.shared.errors import MattingError, NonFiniteError, ShapeError


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = None):
        array = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(array)):
            raise NonFiniteError(f"tensor {name or ''} holds non-finite values".replace("  ", " "))
        array.setflags(write=False)
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class _Record:
    output: Tensor
    inputs: Sequence[Tensor]
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


_local = threading.local()


def _tape_stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


class Tape:
    """Ordered record of executed differentiable operations."""

    def __init__(self):
        self.records: List[_Record] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, output: Tensor, grad=None):
        """Propagate d(output) back through the records in reverse execution order."""
        if grad is None:
            if output.size != 1:
                raise ShapeError(f"backward from a non-scalar output {output.shape} needs an explicit grad")
            grad = np.ones_like(output.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != output.shape:
            raise ShapeError(f"seed gradient shape {grad.shape} does not match output {output.shape}")

        grads = {id(output): grad}
        produced = set()
        leaves = {}
        for record in reversed(self.records):
            produced.add(id(record.output))
            out_grad = grads.pop(id(record.output), None)
            if out_grad is None:
                continue
            input_grads = record.backward(out_grad)
            for tensor, g in zip(record.inputs, input_grads):
                if g is None or not isinstance(tensor, Tensor) or not tensor.requires_grad:
                    continue
                key = id(tensor)
                grads[key] = grads[key] + g if key in grads else g
                leaves[key] = tensor
        if id(output) not in produced and output.requires_grad:
            leaves[id(output)] = output
        for key, tensor in leaves.items():
            if key in produced or key not in grads:
                continue
            g = grads[key]
            if not np.all(np.isfinite(g)):
                raise NonFiniteError("gradient became non-finite during backward")
            tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g


def current_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data, inputs, backward) -> Tensor:
    """Wrap a forward value, recording it on the active tape when any input tracks gradients."""
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("operation produced non-finite values")
    tape = current_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        tape.records.append(_Record(out, list(inputs), backward))
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --- elementwise ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward)


def scale(x, factor: float) -> Tensor:
    x = as_tensor(x)
    factor = float(factor)
    return _result(x.data * factor, (x,), lambda g: (g * factor,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    positive = x.data > 0
    return _result(np.where(positive, x.data, 0.0), (x,), lambda g: (g * positive,))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    factor = np.where(x.data > 0, 1.0, float(slope))
    return _result(x.data * factor, (x,), lambda g: (g * factor,))


def absolute(x) -> Tensor:
    x = as_tensor(x)
    sign = np.sign(x.data)
    return _result(np.abs(x.data), (x,), lambda g: (g * sign,))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _result(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


# --- reductions and reshaping --------------------------------------------

def sum(x, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(out, (x,), backward)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    return scale(sum(x, axis=axis), 1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)
    return _result(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got rank {x.data.ndim}")
    return _result(x.data.T, (x,), lambda g: (g.T,))


def take(x, indices) -> Tensor:
    """Gather elements of the flattened tensor at ``indices``."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    out = x.data.reshape(-1)[indices]

    def backward(g):
        flat = np.zeros(x.size)
        np.add.at(flat, indices, g)
        return (flat.reshape(x.shape),)

    return _result(out, (x,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    reference = tensors[0].shape
    for t in tensors[1:]:
        if t.data.ndim != len(reference) or any(
            t.shape[i] != reference[i] for i in range(len(reference)) if i != axis
        ):
            raise ShapeError(f"concat shape mismatch: {reference} vs {t.shape}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(out, tensors, backward)


# --- linear algebra -------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), backward)


def row_softmax(logits) -> Tensor:
    """Softmax over each row, stabilised by subtracting the row maximum."""
    x = as_tensor(logits)
    if x.data.ndim != 2:
        raise ShapeError(f"row_softmax expects a matrix, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (s * (g - np.sum(g * s, axis=1, keepdims=True)),)

    return _result(s, (x,), backward)


def log_softmax(x, axis: int = 0) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * np.sum(g, axis=axis, keepdims=True),)

    return _result(out, (x,), backward)


# --- convolution and resampling --------------------------------------------

def conv_output_extent(size: int, kernel: int, stride: int, padding: int, dilation: int = 1) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def conv2d(input, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of a [C_in, H, W] input with a [C_out, C_in, kh, kw] kernel."""
    x, w = as_tensor(input), as_tensor(weight)
    b = as_tensor(bias) if bias is not None else None
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects [C,H,W] input and [O,C,kh,kw] weight, got {x.shape} and {w.shape}")
    c_in, height, width = x.shape
    c_out, w_in, kh, kw = w.shape
    if w_in != c_in:
        raise ShapeError(f"conv2d channel mismatch: input has {c_in}, weight expects {w_in}")
    if b is not None and b.shape != (c_out,):
        raise ShapeError(f"conv2d bias shape {b.shape} does not match {c_out} output channels")
    if stride < 1 or padding < 0 or kh < 1 or kw < 1:
        raise ShapeError("conv2d needs stride >= 1, padding >= 0 and a non-empty kernel")
    out_h = conv_output_extent(height, kh, stride, padding)
    out_w = conv_output_extent(width, kw, stride, padding)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv2d output extent {out_h}x{out_w} is not positive")

    padded = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((c_in, kh, kw, out_h, out_w))
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = padded[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride]
    out = np.einsum("ocij,cijhw->ohw", w.data, cols)
    if b is not None:
        out = out + b.data[:, None, None]

    def backward(g):
        grad_w = np.einsum("ohw,cijhw->ocij", g, cols)
        grad_cols = np.einsum("ocij,ohw->cijhw", w.data, g)
        grad_padded = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                grad_padded[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += grad_cols[:, i, j]
        grad_x = grad_padded[:, padding:padding + height, padding:padding + width]
        grad_b = g.sum(axis=(1, 2)) if b is not None else None
        return grad_x, grad_w, grad_b

    inputs = (x, w, b) if b is not None else (x, w)
    return _result(out, inputs, backward)


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Half-pixel-centred linear interpolation operator of shape (n_out, n_in)."""
    m = np.zeros((n_out, n_in))
    ratio = n_in / n_out
    for o in range(n_out):
        src = min(max((o + 0.5) * ratio - 0.5, 0.0), n_in - 1)
        i0 = int(math.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    return m


def upsample_bilinear2x(x) -> Tensor:
    x = as_tensor(x)
    _, height, width = x.shape
    uh, uw = bilinear_matrix(height, 2 * height), bilinear_matrix(width, 2 * width)
    out = np.einsum("ih,chw,jw->cij", uh, x.data, uw)
    return _result(out, (x,), lambda g: (np.einsum("ih,cij,jw->chw", uh, g, uw),))


def upsample_nearest2x(x) -> Tensor:
    x = as_tensor(x)
    c, height, width = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)
    return _result(out, (x,), lambda g: (g.reshape(c, height, 2, width, 2).sum(axis=(2, 4)),))


def _pool_windows(x: Tensor):
    c, height, width = x.shape
    if height % 2 or width % 2:
        raise ShapeError(f"2x2 pooling needs even extents, got {height}x{width}")
    h, w = height // 2, width // 2
    windows = x.data.reshape(c, h, 2, w, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w, 4)
    return windows, (c, h, w)


def avg_pool2x2(x) -> Tensor:
    x = as_tensor(x)
    windows, (c, h, w) = _pool_windows(x)

    def backward(g):
        return (np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) / 4.0,)

    return _result(windows.mean(axis=-1), (x,), backward)


def max_pool2x2(x) -> Tensor:
    x = as_tensor(x)
    windows, (c, h, w) = _pool_windows(x)
    arg = windows.argmax(axis=-1)[..., None]
    out = np.take_along_axis(windows, arg, axis=-1)[..., 0]

    def backward(g):
        grad_windows = np.zeros((c, h, w, 4))
        np.put_along_axis(grad_windows, arg, g[..., None], axis=-1)
        return (grad_windows.reshape(c, h, w, 2, 2).transpose(0, 1, 3, 2, 4).reshape(x.shape),)

    return _result(out, (x,), backward)


# --- regularisation -------------------------------------------------------

def dropout(x, rate: float, mode: str = "train", seed: int = 0) -> Tensor:
    """Inverted dropout; identity in eval mode or at rate 0."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise MattingError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise MattingError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x
    keep = np.random.default_rng(seed).random(x.shape) >= rate
    factor = keep / (1.0 - rate)
    return _result(x.data * factor, (x,), lambda g: (g * factor,))


# --- gradient checking ----------------------------------------------------

@dataclass
class GradcheckReport:
    max_rel_error: float
    per_input: List[float] = field(default_factory=list)
    worst_input: int = -1
    worst_index: tuple = ()
    analytic: List[np.ndarray] = field(default_factory=list, repr=False)
    numeric: List[np.ndarray] = field(default_factory=list, repr=False)

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_error < tolerance


def _scalar(value) -> float:
    out = as_tensor(value)
    if out.size != 1:
        raise ShapeError(f"gradcheck needs a scalar-valued function, got shape {out.shape}")
    result = out.item()
    if not math.isfinite(result):
        raise NonFiniteError("gradcheck evaluation is not finite")
    return result


def gradcheck(f: Callable[..., Tensor], inputs: Sequence, h: float = 1e-6, include=None) -> GradcheckReport:
    """
    Compare tape gradients of scalar ``f(*inputs)`` against central differences.

    ``include`` optionally holds one boolean array per input selecting the
    coordinates to compare (e.g. to skip the kinks of |x|).
    """
    if not 1e-7 <= h <= 1e-5:
        raise MattingError(f"gradcheck step must lie in [1e-7, 1e-5], got {h}")
    base = [np.array(as_tensor(t).data) for t in inputs]

    leaves = [Tensor(b, requires_grad=True) for b in base]
    with Tape() as tape:
        out = f(*leaves)
    _scalar(out)
    tape.backward(out)
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(b) for leaf, b in zip(leaves, base)]

    numeric = []
    for k, b in enumerate(base):
        grad = np.zeros_like(b)
        for index in np.ndindex(b.shape):
            args = [Tensor(x) for x in base]
            plus, minus = b.copy(), b.copy()
            plus[index] += h
            minus[index] -= h
            args[k] = Tensor(plus)
            f_plus = _scalar(f(*args))
            args[k] = Tensor(minus)
            f_minus = _scalar(f(*args))
            grad[index] = (f_plus - f_minus) / (2.0 * h)
        numeric.append(grad)

    report = GradcheckReport(max_rel_error=0.0, analytic=analytic, numeric=numeric)
    for k, (a, n) in enumerate(zip(analytic, numeric)):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        rel = np.abs(a - n) / denom
        if include is not None and include[k] is not None:
            rel = np.where(np.asarray(include[k], dtype=bool), rel, 0.0)
        worst = float(rel.max()) if rel.size else 0.0
        report.per_input.append(worst)
        if worst > report.max_rel_error or report.worst_input < 0:
            report.max_rel_error = max(report.max_rel_error, worst)
            report.worst_input = k
            report.worst_index = tuple(int(i) for i in np.unravel_index(int(rel.argmax()), rel.shape)) if rel.size else ()
    return report
