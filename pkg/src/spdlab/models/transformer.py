"""Tiny pre-norm causal transformer.

Two forward paths share the same arithmetic: :meth:`TinyTransformer.forward`
builds an autograd graph for training, and :class:`TransformerSession` runs
plain numpy with a per-layer key/value cache for decoding.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..errors import InvalidArgument
from ..numerics.tensor import (
    Tensor,
    add,
    causal_softmax,
    causal_softmax_forward,
    embedding,
    gelu,
    gelu_forward,
    layer_norm,
    layer_norm_forward,
    matmul,
    mul,
    reshape,
    transpose,
)


@dataclass(frozen=True)
class TransformerConfig:
    vocab_size: int
    d_model: int = 32
    n_layers: int = 1
    n_heads: int = 2
    d_ff: int = 64
    max_context: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise InvalidArgument(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.max_context < 2:
            raise InvalidArgument("max_context must be at least 2")
        if min(self.vocab_size, self.d_model, self.n_layers, self.d_ff) < 1:
            raise InvalidArgument("config extents must be positive")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def flops_per_token(self, context: int | None = None) -> float:
        """Multiply-add FLOPs for one decoded token at the given context length."""
        ctx = self.max_context if context is None else context
        d, f = self.d_model, self.d_ff
        per_layer = 2 * (4 * d * d + 2 * d * f) + 2 * 2 * ctx * d
        return self.n_layers * per_layer + 2 * d * self.vocab_size

    def to_dict(self) -> dict:
        return asdict(self)


def _param_shapes(cfg: TransformerConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.d_ff
    shapes: dict[str, tuple[int, ...]] = {"tok_emb": (cfg.vocab_size, d), "pos_emb": (cfg.max_context, d)}
    for i in range(cfg.n_layers):
        p = f"h{i}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "attn.wq": (d, d), p + "attn.bq": (d,),
            p + "attn.wk": (d, d),
            p + "attn.wv": (d, d), p + "attn.bv": (d,),
            p + "attn.wo": (d, d), p + "attn.bo": (d,),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "mlp.w1": (d, f), p + "mlp.b1": (f,),
            p + "mlp.w2": (f, d), p + "mlp.b2": (d,),
        })
    shapes.update({"lnf.g": (d,), "lnf.b": (d,)})
    return shapes


class TinyTransformer:
    """Pre-norm blocks, learned positions, output projection tied to the token embedding.

    Keys carry no bias: attention is invariant to it, so its gradient is
    identically zero.
    """

    def __init__(self, config: TransformerConfig, params: dict[str, Tensor]):
        expected = _param_shapes(config)
        if set(expected) != set(params):
            raise InvalidArgument("parameter names do not match the config")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise InvalidArgument(f"{name}: shape {params[name].shape}, expected {shape}")
        self.config = config
        self.params = params

    @property
    def vocab_size(self) -> int:
        return self.config.vocab_size

    @property
    def max_context(self) -> int:
        return self.config.max_context

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def copy(self) -> "TinyTransformer":
        return TinyTransformer(
            self.config, {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.params.items()}
        )

    def forward(self, ids) -> Tensor:
        """Teacher-forced logits ``(batch, positions, vocab)`` as an autograd graph."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        b, t = ids.shape
        cfg, P = self.config, self.params
        if t > cfg.max_context:
            raise InvalidArgument(f"context length {t} exceeds max_context {cfg.max_context}")
        h, dh = cfg.n_heads, cfg.head_dim
        x = add(embedding(P["tok_emb"], ids), embedding(P["pos_emb"], np.arange(t)))
        scale = 1.0 / np.sqrt(dh)
        for i in range(cfg.n_layers):
            p = f"h{i}."
            a = layer_norm(x, P[p + "ln1.g"], P[p + "ln1.b"])

            def heads(proj):
                return transpose(reshape(proj, (b, t, h, dh)), (0, 2, 1, 3))

            q = heads(add(matmul(a, P[p + "attn.wq"]), P[p + "attn.bq"]))
            k = heads(matmul(a, P[p + "attn.wk"]))
            v = heads(add(matmul(a, P[p + "attn.wv"]), P[p + "attn.bv"]))
            att = causal_softmax(mul(matmul(q, transpose(k, (0, 1, 3, 2))), scale))
            o = reshape(transpose(matmul(att, v), (0, 2, 1, 3)), (b, t, cfg.d_model))
            x = add(x, add(matmul(o, P[p + "attn.wo"]), P[p + "attn.bo"]))
            m = layer_norm(x, P[p + "ln2.g"], P[p + "ln2.b"])
            m = gelu(add(matmul(m, P[p + "mlp.w1"]), P[p + "mlp.b1"]))
            x = add(x, add(matmul(m, P[p + "mlp.w2"]), P[p + "mlp.b2"]))
        x = layer_norm(x, P["lnf.g"], P["lnf.b"])
        return matmul(x, transpose(P["tok_emb"], (1, 0)))

    def logits(self, ids: Sequence[int]) -> np.ndarray:
        """Teacher-forced logits ``(positions, vocab)`` for one sequence, no graph."""
        s = self.session()
        return s.logits(ids, last=len(ids))

    def session(self) -> "TransformerSession":
        return TransformerSession(self)


def init_transformer(config: TransformerConfig) -> TinyTransformer:
    """Deterministic init from ``config.seed``: N(0, 0.02) weights (0.1 for token embeddings), zero biases, unit gains."""
    rng = np.random.default_rng(config.seed)
    resid_scale = 1.0 / np.sqrt(2 * config.n_layers)
    params = {}
    for name, shape in _param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            data = np.ones(shape)
        elif leaf.startswith("b"):
            data = np.zeros(shape)
        else:
            std = 0.02 * (resid_scale if leaf in ("wo", "w2") else 1.0)
            if name == "tok_emb":
                std = 0.1
            data = rng.normal(scale=std, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return TinyTransformer(config, params)


class TransformerSession:
    """Incremental decoding state for one sequence.

    ``logits(tokens)`` reuses cached keys/values for the longest common prefix
    with the previous call, truncating anything after a divergence, then runs
    one forward over the remaining positions. ``calls`` counts forwards that
    processed at least one new position.
    """

    def __init__(self, model: TinyTransformer):
        self.model = model
        cfg = model.config
        self.calls = 0
        self.positions_processed = 0
        self._tokens: list[int] = []
        shape = (cfg.n_layers, cfg.n_heads, cfg.max_context, cfg.head_dim)
        self._k = np.zeros(shape)
        self._v = np.zeros(shape)
        self._logits = np.zeros((cfg.max_context, cfg.vocab_size))
        self._w = {k: t.data for k, t in model.params.items()}

    def logits(self, tokens: Sequence[int], last: int = 1) -> np.ndarray:
        cfg = self.model.config
        tokens = [int(t) for t in tokens]
        n = len(tokens)
        if n > cfg.max_context:
            raise InvalidArgument(f"context length {n} exceeds max_context {cfg.max_context}")
        if not 1 <= last <= n:
            raise InvalidArgument(f"cannot return last {last} rows of a {n}-token context")
        keep = 0
        for a, b in zip(self._tokens, tokens):
            if a != b:
                break
            keep += 1
        keep = min(keep, n)
        if keep < n:
            self._extend(tokens[keep:], keep)
            self.calls += 1
            self.positions_processed += n - keep
        self._tokens = tokens
        return self._logits[n - last:n].copy()

    def _extend(self, new: list[int], start: int) -> None:
        cfg, W = self.model.config, self._w
        t = len(new)
        end = start + t
        h, dh = cfg.n_heads, cfg.head_dim
        x = W["tok_emb"][np.asarray(new)] + W["pos_emb"][start:end]
        scale = 1.0 / np.sqrt(dh)
        for i in range(cfg.n_layers):
            p = f"h{i}."
            a = layer_norm_forward(x, W[p + "ln1.g"], W[p + "ln1.b"])[0]
            q = (a @ W[p + "attn.wq"] + W[p + "attn.bq"]).reshape(t, h, dh).transpose(1, 0, 2)
            k = (a @ W[p + "attn.wk"]).reshape(t, h, dh).transpose(1, 0, 2)
            v = (a @ W[p + "attn.wv"] + W[p + "attn.bv"]).reshape(t, h, dh).transpose(1, 0, 2)
            self._k[i, :, start:end] = k
            self._v[i, :, start:end] = v
            keys, vals = self._k[i, :, :end], self._v[i, :, :end]
            att = causal_softmax_forward((q @ keys.transpose(0, 2, 1)) * scale)
            o = (att @ vals).transpose(1, 0, 2).reshape(t, cfg.d_model)
            x = x + (o @ W[p + "attn.wo"] + W[p + "attn.bo"])
            m = layer_norm_forward(x, W[p + "ln2.g"], W[p + "ln2.b"])[0]
            m = gelu_forward(m @ W[p + "mlp.w1"] + W[p + "mlp.b1"])
            x = x + (m @ W[p + "mlp.w2"] + W[p + "mlp.b2"])
        x = layer_norm_forward(x, W["lnf.g"], W["lnf.b"])[0]
        self._logits[start:end] = x @ W["tok_emb"].T
