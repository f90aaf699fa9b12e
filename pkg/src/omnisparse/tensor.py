"""Dense-matrix reverse-mode autodiff and Adam.

Everything runs in float64. A ``Tensor`` records the closure that pushes its
gradient to its parents; ``Tensor.backward`` replays those closures in
reverse topological order.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError, ParameterError, StateError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (teacher forwards, evaluation)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, parents=(), backward=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents = parents
        self._backward = backward
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise DimensionError("backward() needs a scalar loss")
        if self._consumed:
            raise StateError("backward() already ran on this graph")
        if not self.requires_grad:
            raise StateError("loss does not depend on any trainable parameter")
        order, seen = [], set()

        def visit(node):
            # iterative DFS; graphs here are shallow but recursion is still avoided
            stack = [(node, False)]
            while stack:
                n, done = stack.pop()
                if done:
                    order.append(n)
                    continue
                if id(n) in seen:
                    continue
                seen.add(id(n))
                stack.append((n, True))
                for p in n._parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)
        self._consumed = True


class Param(Tensor):
    """A trainable leaf with a stable identifier."""

    __slots__ = ("name", "fresh")

    def __init__(self, name: str, data):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name
        self.fresh = False

    def accumulate(self, g):
        self.grad += g
        self.fresh = True

    def zero_grad(self):
        self.grad[...] = 0.0
        self.fresh = False

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.shape})"


def _accumulate(t: Tensor, g):
    if isinstance(t, Param):
        t.accumulate(g)
    else:
        t.grad += g


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    track = grad_enabled() and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data)
    return Tensor(data, parents, backward, requires_grad=True)


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


def forward_linear(x, W: Tensor, b: Tensor, mask=None) -> Tensor:
    """Return ``x @ (W * mask).T + b``.

    ``mask`` is a {0,1} array of W's shape (or None for dense). Masked
    positions of W get exactly zero gradient.
    """
    x = _wrap(x)
    if x.data.ndim != 2 or W.data.ndim != 2 or b.data.ndim != 1:
        raise DimensionError("linear expects x[batch,in], W[out,in], b[out]")
    if x.shape[1] != W.shape[1] or b.shape[0] != W.shape[0]:
        raise DimensionError(f"cannot apply W{W.shape}, b{b.shape} to x{x.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != W.shape:
            raise DimensionError(f"mask shape {mask.shape} does not match W {W.shape}")
    _check_finite(x.data, "linear input")

    w_eff = W.data if mask is None else W.data * mask
    out = x.data @ w_eff.T + b.data

    def backward(g):
        if W.requires_grad:
            gw = g.T @ x.data
            _accumulate(W, gw if mask is None else gw * mask)
        if b.requires_grad:
            _accumulate(b, g.sum(axis=0))
        if x.requires_grad:
            _accumulate(x, g @ w_eff)

    return _make(out, (x, W, b), backward)


def relu(x) -> Tensor:
    x = _wrap(x)
    keep = x.data > 0
    out = np.where(keep, x.data, 0.0)

    def backward(g):
        _accumulate(x, g * keep)

    return _make(out, (x,), backward)


def dropout(x, rate: float, rng=None, train: bool = True) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    x = _wrap(x)
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ParameterError("train-mode dropout needs an rng")
    scale = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def backward(g):
        _accumulate(x, g * scale)

    return _make(x.data * scale, (x,), backward)


def _log_softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_task(logits, labels) -> Tensor:
    """Mean softmax cross-entropy."""
    logits = _wrap(logits)
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise DimensionError("logits must be [batch, classes]")
    n, c = logits.shape
    if n == 0:
        raise ParameterError("empty batch")
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ParameterError(f"labels must lie in [0, {c})")
    logp = _log_softmax(logits.data)
    rows = np.arange(n)
    out = -logp[rows, labels].mean()

    def backward(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        _accumulate(logits, g * d / n)

    return _make(out, (logits,), backward)


def loss_distill(student, teacher, temperature: float = 1.0) -> Tensor:
    """T^2 * KL(softmax(teacher/T) || softmax(student/T)), batch mean.

    The teacher is treated as a constant; it never receives gradient.
    """
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    student = _wrap(student)
    t_data = teacher.data if isinstance(teacher, Tensor) else np.asarray(teacher, dtype=np.float64)
    if student.shape != t_data.shape:
        raise DimensionError(f"student {student.shape} vs teacher {t_data.shape}")
    n = student.shape[0]
    if n == 0:
        raise ParameterError("empty batch")
    T = float(temperature)
    logp_t = _log_softmax(t_data / T)
    logp_s = _log_softmax(student.data / T)
    p_t = np.exp(logp_t)
    out = T * T * (p_t * (logp_t - logp_s)).sum(axis=1).mean()

    def backward(g):
        _accumulate(student, g * T * (np.exp(logp_s) - p_t) / n)

    return _make(out, (student,), backward)


def weighted_sum(terms, weights) -> Tensor:
    """Scalar combination sum_i w_i * terms_i."""
    terms = [_wrap(t) for t in terms]
    if len(terms) != len(weights) or not terms:
        raise ParameterError("need one weight per term")
    out = sum(float(w) * t.data for w, t in zip(weights, terms))

    def backward(g):
        for w, t in zip(weights, terms):
            if t.requires_grad:
                _accumulate(t, g * float(w))

    return _make(out, tuple(terms), backward)


def mean(terms) -> Tensor:
    return weighted_sum(terms, [1.0 / len(terms)] * len(terms))


@dataclass
class AdamState:
    """Per-parameter Adam moments plus the shared step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        for p in params:
            state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        return state

    def v_hat(self, name):
        """Bias-corrected second moment; all zeros before the first step."""
        if self.step_count == 0:
            return np.zeros_like(self.v[name])
        return self.v[name] / (1.0 - self.beta2 ** self.step_count)


def adam_step(params, state: AdamState):
    """Bias-corrected Adam update, then zero the gradients."""
    params = list(params)
    stale = [p.name for p in params if not p.fresh]
    if stale:
        raise StateError(f"adam_step without fresh gradients for {stale}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p in params:
        g = p.grad
        m = state.m[p.name]
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.lr != 0.0:
            p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.zero_grad()
