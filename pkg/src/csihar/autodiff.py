"""Dense float64 tensors with a define-by-run tape for reverse-mode differentiation.

Usage::

    w = Tensor(np.ones((3, 2)), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum(ad.relu(ad.matmul(x, w)))
    (gw,) = backward(tape, loss, [w])

Operations executed while a tape is active are recorded whenever one of their
inputs requires a gradient.  Outside a tape every op is a plain forward
computation.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from csihar.errors import ContractError, DimensionError, NumericError


class Tensor:
    """Immutable n-d array of float64 values.

    ``grad`` is filled by :func:`backward` for tensors that require gradients and
    accumulates across calls until :meth:`zero_grad`.
    """

    __slots__ = ("data", "requires_grad", "grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if 0 in arr.shape:
            raise DimensionError(f"tensor shape entries must be >= 1, got {arr.shape}")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        arr.setflags(write=False)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> list[float]:
        return self.data.ravel().tolist()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, shape {self.shape}")
        return float(self.data.ravel()[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)


class Node:
    __slots__ = ("inputs", "output", "vjp", "input_ids", "output_id")

    def __init__(self, inputs, output, vjp):
        self.inputs = inputs
        self.output = output
        self.vjp = vjp
        self.input_ids = tuple(id(t) for t in inputs)
        self.output_id = id(output)


class Tape:
    """Append-only record of differentiable operations."""

    _local = threading.local()

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self.nodes)


def _tape_stack() -> list[Tape]:
    stack = getattr(Tape._local, "stack", None)
    if stack is None:
        stack = Tape._local.stack = []
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    result = Tensor._wrap(out)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        tape.nodes.append(Node(tuple(inputs), result, vjp))
    return result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise -----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("subtract", a, b)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("multiply", a, b)
    ad, bd = a.data, b.data
    return _record(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericError("log: non-positive input")
    ad = a.data
    return _record(np.log(ad), (a,), lambda g: (g / ad,))


def clamp_min(a: Tensor, lo: float) -> Tensor:
    mask = a.data >= lo
    return _record(np.maximum(a.data, lo), (a,), lambda g: (g * mask,))


def one_minus(a: Tensor) -> Tensor:
    return _record(1.0 - a.data, (a,), lambda g: (-g,))


def detach(a: Tensor) -> Tensor:
    return Tensor._wrap(a.data)


# -- shape -----------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from None
    src = a.shape
    return _record(out, (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _record(out, (a,), lambda g: (np.transpose(g, inv),))


def index(a: Tensor, idx) -> Tensor:
    out = a.data[idx]
    src = a.shape

    def vjp(g):
        full = np.zeros(src)
        np.add.at(full, idx, g.reshape(np.shape(out)))
        return (full,)

    return _record(out, (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat: no tensors")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            x != y for i, (x, y) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise DimensionError(f"concat: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return _record(out, tensors, lambda g: tuple(np.split(g, bounds, axis=ax)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise DimensionError(f"stack: incompatible shapes {tensors[0].shape} and {t.shape}")
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return _record(
        out, tensors, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n))
    )


# -- reductions ------------------------------------------------------------------


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    src = a.shape
    out = a.data.sum(axis=axis)
    scalar = np.ndim(out) == 0

    def vjp(g):
        if scalar:
            return (np.full(src, g.reshape(())),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return _record(out, (a,), vjp)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis), 1.0 / float(n))


# -- linear algebra --------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; a leading batch axis on ``a`` is allowed."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 1 or b.data.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g @ bd.T
        a2 = ad.reshape(-1, ad.shape[-1])
        gb = a2.T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _record(ad @ bd, (a, b), vjp)


# -- probability -----------------------------------------------------------------


def softmax(v: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted."""
    if not np.all(np.isfinite(v.data)):
        raise NumericError("softmax: non-finite input")
    z = v.data - v.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _record(out, (v,), vjp)


# -- spiking ---------------------------------------------------------------------


def spike(u: Tensor, threshold: float, smooth: bool = False) -> Tensor:
    """Heaviside spike of ``u - threshold`` with the arctan surrogate in backward.

    ``smooth=True`` replaces the forward step with ``1/2 + arctan(pi x)/pi`` so the
    backward rule is the exact derivative; used only for gradient checking.
    """
    x = u.data - threshold
    out = 0.5 + np.arctan(math.pi * x) / math.pi if smooth else (x > 0).astype(np.float64)
    sg = 1.0 / (1.0 + (math.pi * x) ** 2)
    return _record(out, (u,), lambda g: (g * sg,))


# -- convolution -----------------------------------------------------------------


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    # x: [B, C, H, W] already padded -> [B, Ho, Wo, C*k*k]
    b, c, h, w = x.shape
    ho, wo = h - k + 1, w - k + 1
    s = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, shape=(b, c, ho, wo, k, k), strides=(s[0], s[1], s[2], s[3], s[2], s[3])
    )
    return view.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho, wo, c * k * k)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """'Same' 2-d convolution (odd square kernel, stride 1).

    x: [B, C_in, H, W]; w: [C_out, C_in, k, k]; bias: [C_out].
    """
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d: incompatible shapes {x.shape} and {w.shape}")
    k = w.shape[2]
    if k % 2 == 0 or w.shape[3] != k:
        raise DimensionError(f"conv2d: kernel must be odd and square, got {w.shape}")
    p = k // 2
    b_, cin, h, wd = x.shape
    cout = w.shape[0]
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = _im2col(xp, k)  # [B, H, W, Cin*k*k]
    wm = w.data.reshape(cout, -1)
    out = cols @ wm.T  # [B, H, W, Cout]
    if bias is not None:
        out = out + bias.data
    out = out.transpose(0, 3, 1, 2)

    def vjp(g):
        gt = g.transpose(0, 2, 3, 1)  # [B, H, W, Cout]
        gw = (gt.reshape(-1, cout).T @ cols.reshape(-1, cols.shape[-1])).reshape(w.shape)
        gcols = (gt @ wm).reshape(b_, h, wd, cin, k, k)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + h, j : j + wd] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, p : p + h, p : p + wd]
        grads = [gx, gw]
        if bias is not None:
            grads.append(gt.sum(axis=(0, 1, 2)))
        return tuple(grads)

    inputs = (x, w) if bias is None else (x, w, bias)
    return _record(out, inputs, vjp)


def maxpool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; trailing rows/cols that do not fill a window are dropped."""
    b, c, h, w = x.shape
    ho, wo = h // size, w // size
    if ho < 1 or wo < 1:
        raise DimensionError(f"maxpool2d: input {x.shape} smaller than pool {size}")
    xc = x.data[:, :, : ho * size, : wo * size]
    blocks = xc.reshape(b, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5).reshape(
        b, c, ho, wo, size * size
    )
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(b, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(
            b, c, ho * size, wo * size
        )
        gx = np.zeros((b, c, h, w))
        gx[:, :, : ho * size, : wo * size] = gb
        return (gx,)

    return _record(out, (x,), vjp)


# -- backward --------------------------------------------------------------------


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] = ()) -> list[np.ndarray]:
    """Reverse sweep over ``tape`` from the scalar ``loss``.

    Gradients are accumulated into ``.grad`` of every leaf that requires grad and
    returned for ``params`` in order (zeros for parameters the loss never touched).
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    params = list(params)
    produced = {n.output_id for n in tape.nodes}
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(node.output_id, None)
        if g is None:
            continue
        in_grads = node.vjp(g)
        for t, tid, gi in zip(node.inputs, node.input_ids, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if tid in grads:
                grads[tid] = grads[tid] + gi
            else:
                grads[tid] = np.asarray(gi, dtype=np.float64)
            if tid not in produced:
                leaves[tid] = t
    for tid, t in leaves.items():
        g = grads.get(tid)
        if g is None:
            continue
        g = g.reshape(t.shape)
        t.grad = g.copy() if t.grad is None else t.grad + g
    out = []
    for p in params:
        g = grads.get(id(p))
        out.append(np.zeros(p.shape) if g is None else g.reshape(p.shape).copy())
    return out


def gradient_check(
    f: Callable[..., Tensor], params: Sequence, eps: float = 1e-5, sample: int | None = None, seed: int = 0
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f(*tensors)`` must return a scalar tensor and be deterministic.  The error
    for each entry is ``|analytic - fd| / max(1, |analytic|)``.  With ``sample``,
    at most that many seeded random entries per tensor are perturbed.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"gradient_check: eps {eps} outside [1e-7, 1e-3]")
    base = [np.array(_as_tensor(p).data, dtype=np.float64) for p in params]
    tensors = [Tensor(b, requires_grad=True) for b in base]
    with Tape() as tape:
        loss = f(*tensors)
    analytic = backward(tape, loss, tensors)

    def evaluate(arrays):
        val = f(*[Tensor(a) for a in arrays]).item()
        if not math.isfinite(val):
            raise NumericError("gradient_check: non-finite function value")
        return val

    rng = np.random.default_rng(seed)
    worst = 0.0
    for pi, arr in enumerate(base):
        entries = range(arr.size)
        if sample is not None and arr.size > sample:
            entries = sorted(rng.choice(arr.size, size=sample, replace=False))
        for k in entries:
            plus = [b.copy() for b in base]
            minus = [b.copy() for b in base]
            plus[pi].ravel()[k] += eps
            minus[pi].ravel()[k] -= eps
            fd = (evaluate(plus) - evaluate(minus)) / (2 * eps)
            an = analytic[pi].ravel()[k]
            if not math.isfinite(an):
                raise NumericError("gradient_check: non-finite analytic gradient")
            worst = max(worst, abs(an - fd) / max(1.0, abs(an)))
    return worst


# -- optimizers ------------------------------------------------------------------


class SGD:
    """Plain gradient descent with a fixed learning rate."""

    def __init__(self, params: Sequence[Tensor], lr: float):
        self.params = list(params)
        self.lr = float(lr)

    def step(self, grads: Sequence[np.ndarray]) -> list[Tensor]:
        new = []
        for p, g in zip(self.params, grads):
            new.append(Tensor(p.data - self.lr * g, requires_grad=True))
        self.params = new
        return new


class Adam:
    """Adam with bias correction (betas 0.9/0.999)."""

    def __init__(self, params: Sequence[Tensor], lr: float, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> list[Tensor]:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        new = []
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            upd = self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            new.append(Tensor(p.data - upd, requires_grad=True))
        self.params = new
        return new
