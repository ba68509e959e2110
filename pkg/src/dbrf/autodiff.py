"""Reverse-mode automatic differentiation over numpy arrays.

A `Tensor` wraps a float64 ndarray and remembers how it was produced, so
calling :func:`backward` on a scalar result fills the `.grad` field of every
reachable tensor created with ``requires_grad=True``. The op set is the
minimum needed for small dense models: affine maps, elementwise
activations, stable binary cross-entropy, and reductions. Nodes whose
parents are all constants are pruned from the tape, so targets, noise and
dropout masks cost nothing on the backward pass.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, NumericsError


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None = None

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> "Tensor":
        """A constant view of this tensor; gradients stop here."""
        return Tensor(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # operator sugar; every op lives in a module-level function below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ConfigurationError("tensor/tensor division is not part of the op set")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` back down to `shape` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitive ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    val = a.value + b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return _make(val, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    val = a.value * b.value

    def vjp(g):
        return (_unbroadcast(g * b.value, a.value.shape),
                _unbroadcast(g * a.value, b.value.shape))

    return _make(val, (a, b), vjp)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ConfigurationError("matmul expects 2-d operands")
    val = a.value @ b.value

    def vjp(g):
        return g @ b.value.T, a.value.T @ g

    return _make(val, (a, b), vjp)


def linear(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """x @ weights.T + bias for a (batch, in) input and (out, in) weights."""
    x, weights, bias = _as_tensor(x), _as_tensor(weights), _as_tensor(bias)
    if x.value.ndim != 2:
        raise ConfigurationError("linear expects a (batch, in) input")
    if x.value.shape[1] != weights.value.shape[1]:
        raise ConfigurationError(
            f"input width {x.value.shape[1]} != layer in-dimension {weights.value.shape[1]}")
    val = x.value @ weights.value.T + bias.value

    def vjp(g):
        return g @ weights.value, g.T @ x.value, g.sum(axis=0)

    return _make(val, (x, weights, bias), vjp)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.value > 0
    # np.maximum (unlike np.where on the mask) propagates NaN, so poisoned
    # activations surface as a non-finite loss instead of silently zeroing.
    val = np.maximum(a.value, 0.0)

    def vjp(g):
        return (g * mask,)

    return _make(val, (a,), vjp)


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Overflow-free logistic function on a plain ndarray."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = stable_sigmoid(a.value)

    def vjp(g):
        return (g * s * (1.0 - s),)

    return _make(s, (a,), vjp)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    val = np.exp(a.value)

    def vjp(g):
        return (g * val,)

    return _make(val, (a,), vjp)


def log(a) -> Tensor:
    a = _as_tensor(a)
    val = np.log(a.value)

    def vjp(g):
        return (g / a.value,)

    return _make(val, (a,), vjp)


def square(a) -> Tensor:
    a = _as_tensor(a)

    def vjp(g):
        return (g * 2.0 * a.value,)

    return _make(a.value * a.value, (a,), vjp)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes through the interior."""
    a = _as_tensor(a)
    val = np.clip(a.value, lo, hi)
    mask = (a.value >= lo) & (a.value <= hi)

    def vjp(g):
        return (g * mask,)

    return _make(val, (a,), vjp)


def tsum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    val = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return _make(val, (a,), vjp)


def tmean(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def concat_cols(a, b) -> Tensor:
    """Concatenate two (batch, ·) tensors along the feature axis."""
    a, b = _as_tensor(a), _as_tensor(b)
    na = a.value.shape[1]
    val = np.concatenate([a.value, b.value], axis=1)

    def vjp(g):
        return g[:, :na], g[:, na:]

    return _make(val, (a, b), vjp)


def take_cols(a, cols: np.ndarray) -> Tensor:
    """Select feature columns by index from a (batch, d) tensor."""
    a = _as_tensor(a)
    cols = np.asarray(cols, dtype=np.intp)
    val = a.value[:, cols]

    def vjp(g):
        full = np.zeros_like(a.value)
        np.add.at(full, (slice(None), cols), g)
        return (full,)

    return _make(val, (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    val = a.value.reshape(shape)

    def vjp(g):
        return (g.reshape(a.value.shape),)

    return _make(val, (a,), vjp)


def bce_with_logits(logits, targets) -> Tensor:
    """Elementwise -t*log(sigma(l)) - (1-t)*log(1-sigma(l)), safe for any l.

    Computed as max(l, 0) - l*t + log1p(exp(-|l|)); targets are constants.
    """
    logits = _as_tensor(logits)
    t = targets.value if isinstance(targets, Tensor) else np.asarray(targets, dtype=np.float64)
    l = logits.value
    if l.shape != t.shape:
        raise ConfigurationError(f"logits shape {l.shape} != targets shape {t.shape}")
    val = np.maximum(l, 0.0) - l * t + np.log1p(np.exp(-np.abs(l)))

    def vjp(g):
        return (g * (stable_sigmoid(l) - t),)

    return _make(val, (logits,), vjp)


# ---------------------------------------------------------------------------
# tape traversal


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
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


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into `.grad` of every reachable leaf.

    Existing grads are added to, so zero them between steps.
    """
    if not root.requires_grad:
        return
    root.grad = np.ones_like(root.value)
    for node in reversed(_topo_order(root)):
        if node._vjp is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad += g


def zero_grads(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    epsilon: float = 1e-5,
    abs_floor: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst relative error between reverse-mode and central-difference grads.

    `loss_fn` must be deterministic given the current parameter values (fix
    any sampling noise before calling). Entries where both gradients are
    below `abs_floor` compare by absolute difference instead, so dead relu
    units and saturated sigmoids do not divide by ~0.

    Raises NumericsError when the loss itself is non-finite.
    """
    out = loss_fn()
    if out.value.size != 1:
        raise ConfigurationError("grad_check expects a scalar loss")
    if not np.isfinite(out.value):
        raise NumericsError("loss is non-finite at the evaluation point")
    zero_grads(params)
    backward(out)
    analytic = [np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ad in zip(params, analytic):
        flat = p.value.reshape(-1)
        ad_flat = ad.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            gen = rng if rng is not None else np.random.default_rng(0)
            indices = gen.choice(flat.size, size=max_entries, replace=False)
        for i in indices:
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = float(loss_fn().value)
            flat[i] = orig - epsilon
            f_minus = float(loss_fn().value)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericsError("perturbed loss is non-finite during grad_check")
            fd = (f_plus - f_minus) / (2.0 * epsilon)
            scale = max(abs(ad_flat[i]), abs(fd))
            diff = abs(ad_flat[i] - fd)
            err = diff if scale < abs_floor else diff / scale
            if err > worst:
                worst = err
    return worst
