"""Exact k-gram table model.

Every conditional distribution is an explicit probability vector, so decoding
distributions can be enumerated exactly in tests.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from typing import Mapping, Sequence

import numpy as np

from ..errors import InvalidArgument
from .vocab import PAD


class TableLM:
    max_context = None

    def __init__(self, order: int, vocab_size: int, rows: Mapping[tuple[int, ...], np.ndarray],
                 smoothing: float = 0.0):
        if order < 0:
            raise InvalidArgument(f"order must be >= 0, got {order}")
        self.order = order
        self.vocab_size = vocab_size
        self.smoothing = smoothing
        self.rows: dict[tuple[int, ...], np.ndarray] = {}
        for ctx, row in rows.items():
            row = np.asarray(row, dtype=np.float64)
            if len(ctx) != order or row.shape != (vocab_size,):
                raise InvalidArgument(f"bad row for context {ctx}: shape {row.shape}")
            if row.min() < 0 or abs(row.sum() - 1.0) > 1e-12:
                raise InvalidArgument(f"row for context {ctx} is not a distribution")
            self.rows[tuple(int(t) for t in ctx)] = row
        self._uniform = np.full(vocab_size, 1.0 / vocab_size)

    def context_key(self, ids: Sequence[int], position: int) -> tuple[int, ...]:
        """The k tokens ending at ``position`` (left-padded with PAD)."""
        if self.order == 0:
            return ()
        start = position - self.order + 1
        window = [int(t) for t in ids[max(start, 0): position + 1]]
        return (PAD,) * (self.order - len(window)) + tuple(window)

    def row(self, key: tuple[int, ...]) -> np.ndarray:
        return self.rows.get(key, self._uniform)

    def next_distribution(self, ids: Sequence[int]) -> np.ndarray:
        """Exact distribution of the token following ``ids``."""
        return self.row(self.context_key(ids, len(ids) - 1))

    def logits(self, ids: Sequence[int]) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(np.stack([self.row(self.context_key(ids, i)) for i in range(len(ids))]))

    def session(self) -> "TableSession":
        return TableSession(self)


class TableSession:
    """Incremental wrapper with the same call accounting as transformer sessions."""

    def __init__(self, model: TableLM):
        self.model = model
        self.calls = 0
        self._tokens: list[int] = []

    def logits(self, tokens: Sequence[int], last: int = 1) -> np.ndarray:
        tokens = list(tokens)
        keep = 0
        for a, b in zip(self._tokens, tokens):
            if a != b:
                break
            keep += 1
        if keep < len(tokens):
            self.calls += 1
        self._tokens = tokens
        with np.errstate(divide="ignore"):
            rows = [self.model.row(self.model.context_key(tokens, i)) for i in range(len(tokens) - last, len(tokens))]
            return np.log(np.stack(rows))


def fit_table_lm(corpus_ids: Sequence[Sequence[int]] | Sequence[int], order: int, smoothing: float,
                 vocab_size: int) -> TableLM:
    """Smoothed counts: ``row(ctx)[x] ∝ count(ctx, x) + smoothing``; unseen contexts are uniform."""
    if smoothing <= 0:
        raise InvalidArgument("smoothing must be positive")
    docs = corpus_ids
    if len(docs) and not isinstance(docs[0], (list, tuple, np.ndarray)):
        docs = [docs]
    counts: dict[tuple[int, ...], np.ndarray] = defaultdict(lambda: np.zeros(vocab_size))
    shaper = TableLM(order, vocab_size, {})
    for doc in docs:
        doc = [int(t) for t in doc]
        for i in range(len(doc)):
            key = shaper.context_key([PAD] + doc, i)
            counts[key][doc[i]] += 1.0
    rows = {}
    for key, c in counts.items():
        c = c + smoothing
        rows[key] = c / c.sum()
    return TableLM(order, vocab_size, rows, smoothing)


def random_table_lm(rng: np.random.Generator, vocab_size: int, order: int = 1,
                    concentration: float = 1.0) -> TableLM:
    """Dirichlet-distributed rows for every context over the vocabulary."""
    rows = {}
    for key in itertools.product(range(vocab_size), repeat=order):
        row = rng.dirichlet(np.full(vocab_size, concentration))
        row = np.maximum(row, 1e-300)
        rows[key] = row / row.sum()
    return TableLM(order, vocab_size, rows)


def peaked_table_lm(rng: np.random.Generator, vocab_size: int, order: int = 1,
                    leak: float = 1e-9) -> TableLM:
    """Each context puts ``1 - leak`` on one random successor (effectively one-hot)."""
    rows = {}
    for key in itertools.product(range(vocab_size), repeat=order):
        row = np.full(vocab_size, leak / (vocab_size - 1))
        row[rng.integers(vocab_size)] = 1.0 - leak
        rows[key] = row / row.sum()
    return TableLM(order, vocab_size, rows)
