"""A small reverse-mode differentiation engine over float64 numpy arrays.

Only the primitives the autoencoder and its losses need are provided:
matmul, broadcasting add/sub/mul, ReLU-family activations, row-wise squared
error reductions, a safe Euclidean pair distance, and sums.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractError, ParameterError

BASE_LR = 0.05
DECAY_RATE = 0.95
DECAY_STEPS = 10000
LEAKY_SLOPE = 0.01


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An array node in the compute graph.

    Leaves created with ``requires_grad=True`` are parameters; everything
    else built from them records its parents and a backward closure.
    """

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "op", "name")
    __array_ufunc__ = None  # ndarray <op> Tensor dispatches to the reflected Tensor method

    def __init__(self, data, requires_grad=False, _prev=(), op="", name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._prev = _prev
        self._backward = None
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'!r})"

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    @staticmethod
    def _make(data, parents, op):
        parents = tuple(parents)
        return Tensor(data, requires_grad=any(p.requires_grad for p in parents), _prev=parents, op=op)

    # ---- elementwise arithmetic

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor._make(self.data + other.data, (self, other), "add")

        def _backward():
            if self.requires_grad:
                self._accum(_unbroadcast(out.grad, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(out.grad, other.shape))

        out._backward = _backward
        return out

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        other = as_tensor(other)
        out = Tensor._make(self.data - other.data, (self, other), "sub")

        def _backward():
            if self.requires_grad:
                self._accum(_unbroadcast(out.grad, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-out.grad, other.shape))

        out._backward = _backward
        return out

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor._make(self.data * other.data, (self, other), "mul")

        def _backward():
            if self.requires_grad:
                self._accum(_unbroadcast(out.grad * other.data, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(out.grad * self.data, other.shape))

        out._backward = _backward
        return out

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2 or self.shape[1] != other.shape[0]:
            raise ContractError(f"matmul shapes {self.shape} and {other.shape} do not align")
        out = Tensor._make(self.data @ other.data, (self, other), "matmul")

        def _backward():
            if self.requires_grad:
                self._accum(out.grad @ other.data.T)
            if other.requires_grad:
                other._accum(self.data.T @ out.grad)

        out._backward = _backward
        return out

    def __rmatmul__(self, other):
        return as_tensor(other) @ self

    # ---- activations

    def relu(self):
        mask = self.data > 0
        out = Tensor._make(np.where(mask, self.data, 0.0), (self,), "relu")

        def _backward():
            # subgradient 0 at the kink
            self._accum(out.grad * mask)

        out._backward = _backward
        return out

    def leaky_relu(self, slope=LEAKY_SLOPE):
        scale = np.where(self.data > 0, 1.0, slope)
        out = Tensor._make(self.data * scale, (self,), "leaky_relu")

        def _backward():
            self._accum(out.grad * scale)

        out._backward = _backward
        return out

    def square(self):
        out = Tensor._make(self.data * self.data, (self,), "square")

        def _backward():
            self._accum(2.0 * self.data * out.grad)

        out._backward = _backward
        return out

    # ---- reductions

    def sum(self):
        out = Tensor._make(np.sum(self.data), (self,), "sum")

        def _backward():
            self._accum(np.broadcast_to(out.grad, self.shape))

        out._backward = _backward
        return out

    def mean(self):
        return self.sum() * (1.0 / max(self.data.size, 1))

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def activate(t, kind):
    if kind == "relu":
        return t.relu()
    if kind == "leaky_relu":
        return t.leaky_relu()
    if kind in ("linear", None):
        return t
    raise ParameterError(f"unknown activation {kind!r}")


def neighbor_sq_error(pred, targets, mask=None):
    """Per-row mean over valid targets of ``||target_j - pred||^2``.

    ``pred`` is ``(B, D)``; ``targets`` is a constant ``(B, M, D)`` array and
    ``mask`` ``(B, M)`` marks the valid ones. Rows with no valid target give 0.
    """
    pred = as_tensor(pred)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 2:
        targets = targets[:, None, :]
    if targets.shape[0] != pred.shape[0] or targets.shape[2] != pred.shape[1]:
        raise ContractError(f"targets {targets.shape} do not match prediction {pred.shape}")
    if mask is None:
        mask = np.ones(targets.shape[:2])
    mask = np.asarray(mask, dtype=np.float64)
    count = mask.sum(axis=1)
    inv = np.divide(1.0, count, out=np.zeros_like(count), where=count > 0)
    diff = targets - pred.data[:, None, :]  # (B, M, D)
    per_row = (np.einsum("bmd,bmd->bm", diff, diff) * mask).sum(axis=1) * inv
    out = Tensor._make(per_row, (pred,), "neighbor_sq_error")

    def _backward():
        # d/dpred of sum_j w_j ||t_j - p||^2 = 2 * sum_j w_j (p - t_j)
        w = mask * inv[:, None]
        g = -2.0 * np.einsum("bm,bmd->bd", w, diff)
        pred._accum(g * out.grad[:, None])

    out._backward = _backward
    return out


def row_sq_norm(t):
    """``(B, D) -> (B,)`` sum of squares along the last axis."""
    out = Tensor._make(np.einsum("bd,bd->b", t.data, t.data), (t,), "row_sq_norm")

    def _backward():
        t._accum(2.0 * t.data * out.grad[:, None])

    out._backward = _backward
    return out


def pair_distance(a, b):
    """Row-wise Euclidean distance ``||a - b||_2``; the gradient at distance 0 is taken as 0."""
    diff = a - b
    sq = np.einsum("bd,bd->b", diff.data, diff.data)
    dist = np.sqrt(sq)
    out = Tensor._make(dist, (diff,), "pair_distance")

    def _backward():
        inv = np.divide(1.0, dist, out=np.zeros_like(dist), where=dist > 0)
        diff._accum(diff.data * (inv * out.grad)[:, None])

    out._backward = _backward
    return out


def topo_order(root):
    """Nodes reachable from ``root`` with every node after its inputs."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def graph_parameters(root):
    """Distinct parameter leaves the graph depends on."""
    return [n for n in topo_order(root) if n.requires_grad and not n._prev]


def backward(loss):
    """Populate ``.grad`` on every parameter that ``loss`` depends on.

    Gradients are overwritten, not accumulated across calls; constant leaves
    keep ``grad = None``.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = topo_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.requires_grad and node.grad is not None:
            node._backward()


def zero_grad(params):
    for p in params:
        p.grad = None


def sgd_step(params, grads, lr):
    """Plain SGD: returns ``[p - lr * g]`` as new arrays."""
    if not lr > 0:
        raise ParameterError(f"learning rate must be positive, got {lr}")
    if len(params) != len(grads):
        raise ContractError(f"{len(params)} parameters but {len(grads)} gradients")
    out = []
    for p, g in zip(params, grads):
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if p.shape != g.shape:
            raise ContractError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        out.append(p - lr * g)
    return out


def lr_schedule(step, base_lr=BASE_LR, decay_rate=DECAY_RATE, decay_steps=DECAY_STEPS):
    """Staircase exponential decay: ``base_lr * decay_rate ** (step // decay_steps)``."""
    if step < 0:
        raise ParameterError("step must be non-negative")
    return base_lr * decay_rate ** (step // decay_steps)
