"""Minimal reverse-mode automatic differentiation on dense float64 tensors.

A Tensor records the op that produced it and a closure that pushes its
gradient to the inputs; calling backward() on a scalar loss walks the
implicit tape in reverse topological order. Sized for networks with tens
of thousands of parameters: no views, no fusion, batched 2-D math only.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape construction (inference paths)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


def is_grad_enabled() -> bool:
    return _grad_enabled


def sigmoid_stable(x: np.ndarray) -> np.ndarray:
    """Plain-array logistic, stable on both tails."""
    return np.where(x >= 0,
                    1.0 / (1.0 + np.exp(-np.clip(x, 0, None))),
                    np.exp(np.clip(x, None, 0))
                    / (1.0 + np.exp(np.clip(x, None, 0))))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None,
                 name=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def __repr__(self):
        return f"Tensor(name={self.name!r}, shape={self.data.shape})"


def parameter(data, name="") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def constant(data, name="") -> Tensor:
    return Tensor(data, requires_grad=False, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, name) -> Tensor:
    requires = _grad_enabled and any(p.requires_grad for p in parents)
    if not requires:
        return Tensor(data, name=name)
    return Tensor(data, requires_grad=True, parents=tuple(parents),
                  backward_fn=backward_fn, name=name)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")

    def backward(grad):
        a.accumulate(_unbroadcast(grad, a.shape))
        b.accumulate(_unbroadcast(grad, b.shape))

    return _make(data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")

    def backward(grad):
        a.accumulate(_unbroadcast(grad, a.shape))
        b.accumulate(-_unbroadcast(grad, b.shape))

    return _make(data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def backward(grad):
        a.accumulate(_unbroadcast(grad * b.data, a.shape))
        b.accumulate(_unbroadcast(grad * a.data, b.shape))

    return _make(data, (a, b), backward, "mul")


def scale(a, s: float) -> Tensor:
    a = _as_tensor(a)

    def backward(grad):
        a.accumulate(grad * s)

    return _make(a.data * s, (a,), backward, "scale")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    data = a.data @ b.data

    def backward(grad):
        a.accumulate(grad @ b.data.T)
        b.accumulate(a.data.T @ grad)

    return _make(data, (a, b), backward, "matmul")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: incompatible shapes {[t.shape for t in tensors]}")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(grad):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * grad.ndim
            index[axis] = slice(lo, hi)
            t.accumulate(grad[tuple(index)])

    return _make(data, tensors, backward, "concat")


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    a = _as_tensor(a)
    if not (0 <= start and start + length <= a.data.shape[axis]):
        raise ShapeError(
            f"narrow: [{start}, {start + length}) out of bounds for "
            f"axis {axis} of {a.shape}")
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def backward(grad):
        full = np.zeros_like(a.data)
        full[index] = grad
        a.accumulate(full)

    return _make(a.data[index], (a,), backward, "narrow")


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    data = sigmoid_stable(a.data)

    def backward(grad):
        a.accumulate(grad * data * (1.0 - data))

    return _make(data, (a,), backward, "sigmoid")


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    data = np.tanh(a.data)

    def backward(grad):
        a.accumulate(grad * (1.0 - data * data))

    return _make(data, (a,), backward, "tanh")


def relu(a) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def backward(grad):
        a.accumulate(grad * (a.data > 0))

    return _make(data, (a,), backward, "relu")


def linear(x, weight, bias) -> Tensor:
    """x @ weight + bias."""
    return add(matmul(x, weight), bias)


def dropout(a, rate: float, train_mode: bool, rng: np.random.Generator) -> Tensor:
    """Zero activations with probability ``rate`` and rescale survivors.

    Identity in eval mode or at rate 0; the mask comes from the caller's
    generator so training runs stay reproducible.
    """
    a = _as_tensor(a)
    if not train_mode or rate == 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate {rate} outside [0, 1)")
    mask = (rng.random(a.data.shape) >= rate) / (1.0 - rate)

    def backward(grad):
        a.accumulate(grad * mask)

    return _make(a.data * mask, (a,), backward, "dropout")


def mse_loss(pred, target) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(
            f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target.data
    n = max(1, diff.size)
    data = np.array((diff * diff).sum() / n)

    def backward(grad):
        g = grad * 2.0 * diff / n
        pred.accumulate(g)
        target.accumulate(-g)

    return _make(data, (pred, target), backward, "mse_loss")


def add_n(tensors: Sequence) -> Tensor:
    """Sum a non-empty list of same-shaped tensors."""
    out = tensors[0]
    for t in tensors[1:]:
        out = add(out, t)
    return out


def graph_nodes(root: Tensor) -> list[Tensor]:
    """All reachable tape nodes, inputs before the ops that consume them."""
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
        for parent in node.parents:
            stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate .grad on every tensor the scalar ``loss`` depends on."""
    if loss.data.size != 1:
        raise ContractError(
            f"backward expects a scalar loss, got shape {loss.shape}")
    order = graph_nodes(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)


class Adam:
    """Adam with bias correction; moments keyed by parameter identity."""

    def __init__(self, params: Iterable[Tensor], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / (1 - self.beta1 ** t)
            v_hat = self.v[i] / (1 - self.beta2 ** t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
