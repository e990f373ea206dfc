"""Dense float64 tensors with tape-free reverse-mode differentiation.

Every op builds a new :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to parent gradients. ``Tensor.backward`` walks the
graph in reverse topological order.

Ops register a *probe* (a factory producing a small random instance) in
:data:`OPS`; the gradient-check suite iterates over that registry.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import InvalidArgument

GradFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]
Probe = Callable[[np.random.Generator], "tuple[Callable[[], Tensor], list[Tensor]]"]

OPS: dict[str, Probe] = {}


def register_op(name: str) -> Callable[[Probe], Probe]:
    def deco(probe: Probe) -> Probe:
        OPS[name] = probe
        return probe

    return deco


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: GradFn | None = None

    @classmethod
    def _node(cls, data: np.ndarray, parents: Iterable["Tensor"], grad_fn: GradFn) -> "Tensor":
        parents = tuple(parents)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = parents if out.requires_grad else ()
        out._grad_fn = grad_fn if out.requires_grad else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1 or self.data.ndim > 1:
            raise InvalidArgument(f"backward() needs a scalar, got shape {self.shape}")
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
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._grad_fn is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return Tensor._node(
        ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))
    )


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes; ``b`` may be 2-D and shared."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def grad_fn(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor._node(ad @ bd, (a, b), grad_fn)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return Tensor._node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    inverse = np.argsort(axes)
    return Tensor._node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def total(a: Tensor) -> Tensor:
    shape = a.shape
    return Tensor._node(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    vocab = weight.shape[0]

    def grad_fn(g):
        gw = np.zeros((vocab, g.shape[-1]))
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, g.shape[-1]))
        return (gw,)

    return Tensor._node(weight.data[ids], (weight,), grad_fn)


def layer_norm_forward(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * gain + bias, xhat, inv


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    out, xhat, inv = layer_norm_forward(x.data, gain.data, bias.data, eps)
    gd = gain.data

    def grad_fn(g):
        ggain = _unbroadcast(g * xhat, gd.shape)
        gbias = _unbroadcast(g, gd.shape)
        gx_hat = g * gd
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggain, gbias

    return Tensor._node(out, (x, gain, bias), grad_fn)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu_forward(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def gelu(x: Tensor) -> Tensor:
    xd = x.data
    u = _GELU_C * (xd + 0.044715 * xd**3)
    t = np.tanh(u)
    out = 0.5 * xd * (1.0 + t)

    def grad_fn(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * xd**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

    return Tensor._node(out, (x,), grad_fn)


def causal_softmax_forward(scores: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with keys after the query position masked out.

    The last two axes are (query, key); queries are right-aligned against keys
    so a block of new queries can attend to a longer cached prefix.
    """
    tq, tk = scores.shape[-2:]
    mask = np.triu(np.ones((tq, tk), dtype=bool), k=tk - tq + 1)
    s = np.where(mask, -np.inf, scores)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def causal_softmax(scores: Tensor) -> Tensor:
    p = causal_softmax_forward(scores.data)

    def grad_fn(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return Tensor._node(p, (scores,), grad_fn)


# --- probes -----------------------------------------------------------------


def _param(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


def _weighted_sum(out: Tensor, w: np.ndarray) -> Tensor:
    # a fixed random projection so every output entry influences the scalar
    return total(mul(out, w))


@register_op("add")
def _probe_add(rng):
    a, b = _param(rng, 3, 4), _param(rng, 4)
    w = rng.normal(size=(3, 4))
    return (lambda: _weighted_sum(add(a, b), w)), [a, b]


@register_op("mul")
def _probe_mul(rng):
    a, b = _param(rng, 2, 3, 4), _param(rng, 1, 4)
    w = rng.normal(size=(2, 3, 4))
    return (lambda: _weighted_sum(mul(a, b), w)), [a, b]


@register_op("matmul")
def _probe_matmul(rng):
    a, b = _param(rng, 2, 3, 5), _param(rng, 5, 4)
    w = rng.normal(size=(2, 3, 4))
    return (lambda: _weighted_sum(matmul(a, b), w)), [a, b]


@register_op("reshape_transpose")
def _probe_reshape(rng):
    a = _param(rng, 2, 3, 4)
    w = rng.normal(size=(4, 3, 2))
    return (lambda: _weighted_sum(transpose(reshape(a, (3, 2, 4)), (2, 0, 1)), w)), [a]


@register_op("embedding")
def _probe_embedding(rng):
    table = _param(rng, 6, 3)
    ids = np.array([[0, 2, 2], [5, 1, 0]])
    w = rng.normal(size=(2, 3, 3))
    return (lambda: _weighted_sum(embedding(table, ids), w)), [table]


@register_op("layer_norm")
def _probe_layer_norm(rng):
    x, gain, bias = _param(rng, 2, 3, 5), _param(rng, 5), _param(rng, 5)
    w = rng.normal(size=(2, 3, 5))
    return (lambda: _weighted_sum(layer_norm(x, gain, bias), w)), [x, gain, bias]


@register_op("gelu")
def _probe_gelu(rng):
    x = _param(rng, 4, 5, scale=2.0)
    w = rng.normal(size=(4, 5))
    return (lambda: _weighted_sum(gelu(x), w)), [x]


@register_op("causal_softmax")
def _probe_causal_softmax(rng):
    s = _param(rng, 2, 4, 4)
    w = rng.normal(size=(2, 4, 4))
    return (lambda: _weighted_sum(causal_softmax(s), w)), [s]
