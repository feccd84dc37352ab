"""Dense float64 tensors with a reverse-mode tape.

Every op builds a node that remembers its parents and a closure mapping the
upstream gradient to one gradient per parent. ``backward`` walks the tape in
reverse topological order. Nodes whose inputs never require a gradient are not
recorded at all, so frozen parameters cost nothing and keep a zero ``grad``.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_grad_enabled = True


class DimensionError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


class Parameter(Tensor):
    """A named leaf tensor with a persistent gradient buffer.

    ``trainable=False`` detaches the parameter from the tape: ops that consume it
    do not record a path back to it and its ``grad`` stays exactly zero.
    """

    __slots__ = ("name",)

    def __init__(self, data, name: str, trainable: bool = True):
        super().__init__(np.array(data, dtype=np.float64, order="C"), requires_grad=trainable)
        self.name = name
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    @trainable.setter
    def trainable(self, flag: bool) -> None:
        self.requires_grad = bool(flag)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = tuple(parents)
        out._backward = backward
        return out
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a, b) -> Tensor:
    """2-D matrix product ``[m, k] @ [k, n]``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _node(a.data @ b.data, (a, b), backward)


def dot(a, b) -> Tensor:
    return tsum(mul(a, b))


def tsum(x: Tensor, axis=None) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(out, (x,), backward)


def mean(x: Tensor, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def getitem(x: Tensor, index) -> Tensor:
    """Basic (slice) indexing."""
    x = as_tensor(x)

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _node(x.data[index], (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def take_rows(x: Tensor, idx) -> Tensor:
    """Gather rows ``x[idx]`` along axis 0; repeated indices accumulate."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _node(x.data[idx], (x,), backward)


def put_rows(base: Tensor, idx, values: Tensor) -> Tensor:
    """Copy of ``base`` with rows ``idx`` replaced by ``values`` (idx unique)."""
    base, values = as_tensor(base), as_tensor(values)
    idx = np.asarray(idx, dtype=np.intp)
    out = base.data.copy()
    out[idx] = values.data

    def backward(g):
        gb = g.copy()
        gb[idx] = 0.0
        return gb, g[idx]

    return _node(out, (base, values), backward)


# --------------------------------------------------------------- activations

def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x.data))
    s = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _node(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return _node(t, (x,), lambda g: (g * (1.0 - t * t),))


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data)
    return _node(e, (x,), lambda g: (g * e,))


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,))


def _softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _logsumexp_np(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=-1, keepdims=True)
    return (zmax + np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True)))[..., 0]


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-shifted."""
    x = as_tensor(x)
    s = _softmax_np(x.data)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _node(s, (x,), backward)


def log_softmax(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = x.data - _logsumexp_np(x.data)[..., None]
    s = np.exp(out)

    def backward(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return _node(out, (x,), backward)


def lse_loss(q: Tensor, k) -> Tensor:
    """``log(sum_j exp(q_j)) - q_k`` over the last axis.

    ``q`` of shape ``[M]`` with an integer ``k`` gives a scalar; ``q`` of shape
    ``[B, M]`` with ``k`` of shape ``[B]`` gives one loss per row.
    """
    q = as_tensor(q)
    m = q.shape[-1]
    k_arr = np.asarray(k, dtype=np.intp)
    if np.any(k_arr < 0) or np.any(k_arr >= m):
        raise IndexError(f"class index {k} out of range for {m} logits")
    if q.ndim == 1:
        if k_arr.ndim != 0:
            raise DimensionError("a single logit vector takes a single class index")
        out = _logsumexp_np(q.data) - q.data[k_arr]
        onehot = np.zeros(m)
        onehot[k_arr] = 1.0
    else:
        if k_arr.shape != q.shape[:1]:
            raise DimensionError(f"labels {k_arr.shape} do not match logits {q.shape}")
        rows = np.arange(q.shape[0])
        out = _logsumexp_np(q.data) - q.data[rows, k_arr]
        onehot = np.zeros_like(q.data)
        onehot[rows, k_arr] = 1.0
    s = _softmax_np(q.data)

    def backward(g):
        return (np.asarray(g)[..., None] * (s - onehot),)

    return _node(out, (q,), backward)


# ---------------------------------------------------------------- convolution

def _windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    # [B, C, H', W', k, k]
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Valid cross-correlation.

    ``x`` is ``[C, H, W]`` or batched ``[B, C, H, W]``; ``kernels`` is
    ``[F, C, k, k]``. Output height is ``(H - k) // stride + 1``.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernels.ndim != 4:
        raise DimensionError(f"conv2d: bad ranks {x.shape}, {kernels.shape}")
    b, c, h, w = xd.shape
    f, kc, kh, kw = kernels.shape
    if kc != c or kh != kw:
        raise DimensionError(f"conv2d: kernels {kernels.shape} do not fit input {x.shape}")
    if kh > h or kw > w:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than input {h}x{w}")
    if stride < 1:
        raise DimensionError("conv2d: stride must be >= 1")
    k = kh
    win = _windows(xd, k, stride)
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * k * k)
    wmat = kernels.data.reshape(f, c * k * k)
    out = (cols @ wmat.T).reshape(b, ho, wo, f).transpose(0, 3, 1, 2)
    if squeeze:
        out = out[0]

    def backward(g):
        g4 = g[None] if squeeze else g
        gcols = g4.transpose(0, 2, 3, 1).reshape(b * ho * wo, f)
        gk = (gcols.T @ cols).reshape(kernels.shape) if kernels.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (gcols @ wmat).reshape(b, ho, wo, c, k, k)
            gx4 = np.zeros_like(xd)
            for di in range(k):
                for dj in range(k):
                    gx4[:, :, di:di + stride * (ho - 1) + 1:stride,
                        dj:dj + stride * (wo - 1) + 1:stride] += dcols[..., di, dj].transpose(0, 3, 1, 2)
            gx = gx4[0] if squeeze else gx4
        return gx, gk

    return _node(np.ascontiguousarray(out), (x, kernels), backward)


def avg_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping mean pooling over the last two axes; ragged edges dropped."""
    x = as_tensor(x)
    *lead, h, w = x.shape
    ho, wo = h // size, w // size
    crop = x.data[..., :ho * size, :wo * size]
    out = crop.reshape(*lead, ho, size, wo, size).mean(axis=(-3, -1))

    def backward(g):
        full = np.zeros_like(x.data)
        up = np.repeat(np.repeat(g, size, axis=-2), size, axis=-1) / (size * size)
        full[..., :ho * size, :wo * size] = up
        return (full,)

    return _node(out, (x,), backward)


# ------------------------------------------------------------------- backward

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable trainable leaf's ``grad``."""
    if loss.data.ndim != 0:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def grad_check(f: Callable[[], Tensor], params: Sequence[Parameter], eps: float = 1e-5) -> float:
    """Max over coordinates of ``|analytic - numeric| / max(1, |numeric|)``.

    ``f`` must rebuild its graph from the current parameter values on each call.
    Only trainable parameters are perturbed.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps={eps} outside [1e-7, 1e-3]")
    params = [p for p in params if p.trainable]
    zero_grad(params)
    backward(f())
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            gflat = ga.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + eps
                fp = f().item()
                flat[j] = orig - eps
                fm = f().item()
                flat[j] = orig
                numeric = (fp - fm) / (2 * eps)
                worst = max(worst, abs(gflat[j] - numeric) / max(1.0, abs(numeric)))
    zero_grad(params)
    return worst
