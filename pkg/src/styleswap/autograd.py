"""Reverse-mode automatic differentiation over dense float64 arrays.

Just enough surface for a small encoder-decoder transformer: elementwise
arithmetic, matmul, relu, layer norm, softmax, cross entropy, an embedding
gather, and shape plumbing. Tensors double as the tape: every op assigns its
output a monotonically increasing id, so creation order is a topological
order of the graph, and backward() replays the reachable entries exactly
once, newest first. Grads accumulate additively; the caller clears them
between optimizer steps.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "DimensionError",
    "no_grad",
    "grad_enabled",
    "add",
    "mul",
    "matmul",
    "relu",
    "reshape",
    "transpose",
    "tsum",
    "embedding",
    "layer_norm",
    "softmax",
    "cross_entropy",
    "backward",
    "grad_check",
]

_ids = itertools.count()
_grad_enabled = True


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A float64 ndarray with optional participation in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_id", "_op", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._id = next(_ids)
        self._op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._bwd: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # operator sugar; scalars and ndarrays are wrapped as constants
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), _const(-1.0)))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _const(-1.0))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _const(x) -> Tensor:
    return Tensor(x, requires_grad=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else _const(x)


def _make(data, op: str, parents: tuple[Tensor, ...], bwd) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data)
    out.grad = None
    out._id = next(_ids)
    out._op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._bwd = bwd
    else:
        out.requires_grad = False
        out._parents = ()
        out._bwd = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# ops


def add(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        ga = _unbroadcast(g, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data + b.data, "add", (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        ga = _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, "mul", (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product, plain 2-d or batched with identical leading dims."""
    ash, bsh = a.data.shape, b.data.shape
    if a.data.ndim < 2 or b.data.ndim < 2 or ash[-1] != bsh[-2]:
        raise DimensionError(f"matmul: incompatible shapes {ash} x {bsh}")
    if a.data.ndim != b.data.ndim or ash[:-2] != bsh[:-2]:
        raise DimensionError(f"matmul: mismatched batch dims {ash} x {bsh}")

    def bwd(g):
        ga = g @ b.data.swapaxes(-1, -2) if a.requires_grad else None
        gb = a.data.swapaxes(-1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, "matmul", (a, b), bwd)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0.0)

    def bwd(g):
        return ((g * (x.data > 0.0)) if x.requires_grad else None,)

    return _make(out_data, "relu", (x,), bwd)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def bwd(g):
        return (g.reshape(x.data.shape) if x.requires_grad else None,)

    return _make(x.data.reshape(shape), "reshape", (x,), bwd)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (g.transpose(inv) if x.requires_grad else None,)

    return _make(np.ascontiguousarray(x.data.transpose(axes)), "transpose", (x,), bwd)


def tsum(x: Tensor) -> Tensor:
    def bwd(g):
        return (np.full(x.data.shape, float(g)) if x.requires_grad else None,)

    return _make(np.asarray(x.data.sum()), "sum", (x,), bwd)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather: out[..., :] = weight[ids[...], :]."""
    ids = np.asarray(ids, dtype=np.int64)

    def bwd(g):
        if not weight.requires_grad:
            return (None,)
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.ravel(), g.reshape(-1, weight.data.shape[1]))
        return (gw,)

    return _make(weight.data[ids], "embedding", (weight,), bwd)


def layer_norm(z: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then scale and shift."""
    h = z.data.shape[-1]
    if gain.data.shape != (h,) or bias.data.shape != (h,):
        raise DimensionError(
            f"layer_norm: gain {gain.data.shape} / bias {bias.data.shape} do not match feature dim {h}"
        )
    if eps <= 0:
        raise ValueError("layer_norm: eps must be > 0")
    mu = z.data.mean(axis=-1, keepdims=True)
    centered = z.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    zhat = centered * inv_std

    def bwd(g):
        ggain = (g * zhat).reshape(-1, h).sum(axis=0) if gain.requires_grad else None
        gbias = g.reshape(-1, h).sum(axis=0) if bias.requires_grad else None
        if z.requires_grad:
            gz_hat = g * gain.data
            m1 = gz_hat.mean(axis=-1, keepdims=True)
            m2 = (gz_hat * zhat).mean(axis=-1, keepdims=True)
            gz = inv_std * (gz_hat - m1 - zhat * m2)
        else:
            gz = None
        return gz, ggain, gbias

    return _make(gain.data * zhat + bias.data, "layer_norm", (z, gain, bias), bwd)


def softmax(z: Tensor, axis: int = -1) -> Tensor:
    if not -z.data.ndim <= axis < z.data.ndim:
        raise DimensionError(f"softmax: axis {axis} invalid for shape {z.data.shape}")
    shifted = z.data - z.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if not z.requires_grad:
            return (None,)
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - dot),)

    return _make(out_data, "softmax", (z,), bwd)


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_id: int) -> Tensor:
    """Mean negative log-likelihood over positions whose target != ignore_id."""
    if logits.data.ndim != 2:
        raise DimensionError(f"cross_entropy: logits must be 2-d, got {logits.data.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    n, v = logits.data.shape
    if targets.shape != (n,):
        raise DimensionError(f"cross_entropy: {n} logit rows vs targets {targets.shape}")
    valid = targets != ignore_id
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("cross_entropy: empty loss (all positions ignored)")
    in_range = (targets[valid] >= 0) & (targets[valid] < v)
    if not in_range.all():
        raise ValueError("cross_entropy: target id outside [0, V)")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    safe_targets = np.where(valid, targets, 0)
    nll = -logp[np.arange(n), safe_targets]
    loss = nll[valid].mean()

    def bwd(g):
        if not logits.requires_grad:
            return (None,)
        grad = np.exp(logp)
        grad[np.arange(n), safe_targets] -= 1.0
        grad[~valid] = 0.0
        return (grad * (float(g) / n_valid),)

    return _make(np.asarray(loss), "cross_entropy", (logits,), bwd)


# ---------------------------------------------------------------------------
# backward pass and the finite-difference oracle


def backward(loss: Tensor) -> None:
    """Populate .grad on every reachable requires_grad leaf.

    Walks the recorded entries in reverse creation order, which is a reverse
    topological order by construction, so each entry is processed once.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return

    nodes: list[Tensor] = []
    seen = set()
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        nodes.append(node)
        stack.extend(p for p in node._parents if p.requires_grad)
    nodes.sort(key=lambda t: t._id, reverse=True)

    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in nodes:
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        if node._bwd is None:
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad += g
            continue
        for parent, pg in zip(node._parents, node._bwd(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = flowing.get(id(parent))
            if acc is None:
                # own the buffer: numpy scalars are immutable and views of g
                # alias a buffer another edge may still accumulate into
                flowing[id(parent)] = np.array(pg) if (pg is g or pg.ndim == 0) else pg
            else:
                acc += pg


def grad_check(f: Callable[[Tensor], Tensor], w: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between backward grads of f and central differences.

    Perturbs every element of w, so keep w small. The numeric side never
    touches the tape; the analytic side is an ordinary forward + backward.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be > 0")
    probe = Tensor(w.data.copy(), requires_grad=True)
    loss = f(probe)
    backward(loss)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(probe.data)

    numeric = np.zeros_like(probe.data)
    flat = probe.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f(probe).data)
            flat[i] = orig - eps
            lo = float(f(probe).data)
            flat[i] = orig
            num_flat[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
