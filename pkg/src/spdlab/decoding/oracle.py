"""Exact first-token marginals of one speculative step, by enumeration over table models."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import InvalidArgument
from ..models.table import TableLM
from .engine import residual_distribution
from .policy import DecodePolicy

MAX_ORACLE_VOCAB = 32


def _adjusted(model, context, policy: DecodePolicy) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logits = np.log(model.next_distribution(context))
    return policy.distribution(logits)


def first_token_marginal(target, draft, context: Sequence[int], rule: str, policy: DecodePolicy,
                         n: int = 1) -> np.ndarray:
    """Distribution of the first emitted token.

    Enumerates the draft proposal x ~ p_D, the accept/reject outcome and the
    replacement token. ``n`` does not change the first token's law; it is
    accepted for interface symmetry with the engine.
    """
    if not isinstance(target, TableLM) or not isinstance(draft, TableLM):
        raise InvalidArgument("first_token_marginal needs TableLM target and draft")
    if target.vocab_size != draft.vocab_size or target.vocab_size > MAX_ORACLE_VOCAB:
        raise InvalidArgument(f"vocabularies must match and hold at most {MAX_ORACLE_VOCAB} tokens")
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    p_t = _adjusted(target, context, policy)
    p_d = _adjusted(draft, context, policy)
    res = residual_distribution(p_t, p_d)
    replacement = p_t if res is None else res
    vocab = len(p_t)
    marginal = np.zeros(vocab)
    for x in range(vocab):
        if p_d[x] == 0.0:
            continue
        if rule == "standard_ratio":
            accept = min(1.0, p_t[x] / p_d[x])
        elif rule == "paper_exact_match":
            accept = p_t[x]
        else:
            raise InvalidArgument(f"unknown acceptance rule {rule!r}")
        marginal[x] += p_d[x] * accept
        marginal += p_d[x] * (1.0 - accept) * replacement
    return marginal


def exact_match_marginal_closed_form(p_t: np.ndarray, p_d: np.ndarray) -> np.ndarray:
    """``p_D * p_T + (1 - sum(p_D * p_T)) * p_res`` for the match-based rule."""
    p_t, p_d = np.asarray(p_t, float), np.asarray(p_d, float)
    res = residual_distribution(p_t, p_d)
    replacement = p_t if res is None else res
    agree = p_d * p_t
    return agree + (1.0 - agree.sum()) * replacement


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
