"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Every operation records its parents and a pull-back closure; `backward`
topologically sorts the recorded graph and accumulates gradients into leaf
tensors created with `requires_grad=True`. A graph can be differentiated
once: nodes are consumed by `backward`, and building on or re-deriving
gradients through a consumed node raises. The operator set is exactly what
the policy/value networks need, nothing more.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

MASK_OFFSET = 1e9  # additive logit offset; exp(-1e9) underflows to exactly 0.0


class ConsumedGraphError(RuntimeError):
    """A computation record was reused after backward consumed it."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_pullback", "_consumed")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _pullback: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._pullback = _pullback
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A constant view of the current value; gradients do not flow past it."""
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, leaf={self.requires_grad})"

    # operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's .grad."""
        if self.data.size != 1:
            raise ValueError("backward requires a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            if node._consumed:
                raise ConsumedGraphError("graph contains a node already consumed by backward")
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._pullback is None:
                continue
            for parent, pg in zip(node._parents, node._pullback(g)):
                if pg is None:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
            node._consumed = True
            node._pullback = None  # release closures eagerly


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    out = Tensor(a.data + b.data, _parents=(a, b))
    out._pullback = lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    da, db = a.data, b.data  # bind values now; parameters may be updated later
    out = Tensor(da * db, _parents=(a, b))
    out._pullback = lambda g: (
        _unbroadcast(g * db, da.shape),
        _unbroadcast(g * da, db.shape),
    )
    return out


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    da, db = a.data, b.data
    out = Tensor(da @ db, _parents=(a, b))

    def pull(g):
        if da.ndim == 1 and db.ndim == 1:  # dot product, g scalar
            return g * db, g * da
        if da.ndim == 1:  # (F,) @ (F,H) -> (H,)
            return g @ db.T, np.outer(da, g)
        if db.ndim == 1:  # (N,F) @ (F,) -> (N,)
            return np.outer(g, db), da.T @ g
        return g @ db.T, da.T @ g

    out._pullback = pull
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T, _parents=(a,))
    out._pullback = lambda g: (g.T,)
    return out


def tsum(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(), _parents=(a,))
    out._pullback = lambda g: (np.broadcast_to(g, a.data.shape).copy(),)
    return out


def mean_axis0(a: Tensor) -> Tensor:
    n = a.data.shape[0]
    out = Tensor(a.data.mean(axis=0), _parents=(a,))
    out._pullback = lambda g: (np.broadcast_to(g / n, a.data.shape).copy(),)
    return out


def concat(parts: Iterable[Tensor], axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), _parents=tuple(parts))
    sizes = [p.data.shape[axis] for p in parts]

    def pull(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    out._pullback = pull
    return out


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, slope * a.data), _parents=(a,))
    out._pullback = lambda g: (np.where(mask, g, slope * g),)
    return out


def elu(a: Tensor) -> Tensor:
    pos = a.data > 0
    neg = np.expm1(np.minimum(a.data, 0.0))
    out = Tensor(np.where(pos, a.data, neg), _parents=(a,))
    out._pullback = lambda g: (np.where(pos, g, g * (neg + 1.0)),)
    return out


def exp(a: Tensor) -> Tensor:
    value = np.exp(a.data)
    out = Tensor(value, _parents=(a,))
    out._pullback = lambda g: (g * value,)
    return out


def log(a: Tensor) -> Tensor:
    da = a.data
    out = Tensor(np.log(da), _parents=(a,))
    out._pullback = lambda g: (g / da,)
    return out


def rectifier(a: Tensor) -> Tensor:
    """Positive part max(x, 0)."""
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0), _parents=(a,))
    out._pullback = lambda g: (np.where(mask, g, 0.0),)
    return out


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradient passes only inside the interval."""
    inside = (a.data > lo) & (a.data < hi)
    out = Tensor(np.clip(a.data, lo, hi), _parents=(a,))
    out._pullback = lambda g: (np.where(inside, g, 0.0),)
    return out


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; the gradient follows the smaller branch (ties go to a)."""
    take_a = a.data <= b.data
    out = Tensor(np.where(take_a, a.data, b.data), _parents=(a, b))
    out._pullback = lambda g: (
        _unbroadcast(np.where(take_a, g, 0.0), a.data.shape),
        _unbroadcast(np.where(take_a, 0.0, g), b.data.shape),
    )
    return out


def pick(a: Tensor, index: int) -> Tensor:
    out = Tensor(a.data[index], _parents=(a,))

    def pull(g):
        ga = np.zeros_like(a.data)
        ga[index] = g
        return (ga,)

    out._pullback = pull
    return out


def masked_row_softmax(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Row-wise softmax restricted to `mask`; masked entries are exactly 0.

    Implemented as an additive -1e9 offset before a stabilized softmax, which
    drives masked exponentials below the float64 underflow threshold.
    """
    if not mask.any(axis=1).all():
        raise ValueError("every row needs at least one unmasked entry")
    shifted = scores.data - np.where(mask, 0.0, MASK_OFFSET)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    out = Tensor(probs, _parents=(scores,))
    out._pullback = lambda g: (probs * (g - (g * probs).sum(axis=1, keepdims=True)),)
    return out


def masked_log_softmax(logits: Tensor, mask: np.ndarray) -> Tensor:
    """log softmax over the unmasked support of a logit vector.

    Masked entries carry a ~-1e9 log-probability whose exp is exactly 0; their
    gradient contribution vanishes whenever downstream weights are 0 there.
    """
    if logits.data.ndim != 1:
        raise ValueError("expected a logit vector")
    if not mask.any():
        raise ValueError("mask must keep at least one action")
    shifted = logits.data - np.where(mask, 0.0, MASK_OFFSET)
    m = shifted.max()
    lse = m + np.log(np.exp(shifted - m).sum())
    logp = shifted - lse
    probs = np.exp(logp)
    out = Tensor(logp, _parents=(logits,))
    out._pullback = lambda g: (g - probs * g.sum(),)
    return out


class ParamStore:
    """Named collection of leaf tensors (the trainable parameters)."""

    def __init__(self, tensors: dict[str, Tensor] | None = None):
        self.tensors: dict[str, Tensor] = dict(tensors or {})

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.tensors:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
        self.tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def items(self) -> list[tuple[str, Tensor]]:
        return [(n, self.tensors[n]) for n in self.names()]

    def zero_grad(self, prefix: str = "") -> None:
        for name, t in self.tensors.items():
            if name.startswith(prefix):
                t.grad = None

    def n_params(self, prefix: str = "") -> int:
        return sum(t.data.size for n, t in self.tensors.items() if n.startswith(prefix))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.tensors):
            missing = set(self.tensors) ^ set(state)
            raise ValueError(f"parameter name mismatch: {sorted(missing)}")
        for name, value in state.items():
            if self.tensors[name].data.shape != value.shape:
                raise ValueError(f"shape mismatch for {name!r}")
            self.tensors[name].data = value.astype(np.float64).copy()

    def clone(self) -> "ParamStore":
        out = ParamStore()
        for name, t in self.items():
            out.add(name, t.data.copy())
        return out

    def assert_finite(self) -> None:
        for name, t in self.items():
            if not np.all(np.isfinite(t.data)):
                raise FloatingPointError(f"parameter {name!r} contains non-finite values")


class Adam:
    """Adaptive moment estimation over a fixed parameter subset."""

    def __init__(
        self,
        params: list[tuple[str, Tensor]],
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params}
        self.v = {name: np.zeros_like(t.data) for name, t in params}

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, t in self.params:
            if t.grad is None:
                continue
            m = self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * t.grad
            v = self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * t.grad**2
            t.data = t.data - self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def zero_grad(self) -> None:
        for _, t in self.params:
            t.grad = None
