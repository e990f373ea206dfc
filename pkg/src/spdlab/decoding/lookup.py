"""Draft-free speculation by copying continuations of repeated n-grams."""

from __future__ import annotations

import time
from typing import Sequence

import numpy as np

from .. import _kernels
from .engine import _check_budget, _emit, _prefill, verify_block
from .policy import DecodePolicy, SpecDecodeConfig, one_hot
from .trace import BONUS, CORRECTION, TARGET, BlockRecord, DecodeTrace


def prompt_lookup_draft(context: Sequence[int], n: int, max_order: int = 3, min_order: int = 1) -> list[int] | None:
    """Copy the ``n`` tokens that followed the most recent earlier occurrence of the longest matching suffix.

    When the copied span reaches the end of the context, copying continues
    through the tokens proposed so far (a period-p context keeps its period).
    Returns ``None`` when no suffix of length min_order..max_order recurs.
    """
    ctx = [int(t) for t in context]
    if n < 1 or max_order < 1:
        return None
    start, order = _kernels.suffix_match(np.asarray(ctx, dtype=np.int64), max_order)
    if start < 0 or order < min_order:
        return None
    seq = list(ctx)
    out = []
    for j in range(n):
        tok = seq[start + j]
        out.append(tok)
        seq.append(tok)
    return out


def prompt_lookup_decode(target, prompt: Sequence[int], config: SpecDecodeConfig, policy: DecodePolicy,
                         max_order: int = 3, min_order: int = 1) -> tuple[list[int], DecodeTrace]:
    """Speculative decoding with n-gram lookup proposals; falls back to one target step on a miss.

    Proposals are deterministic, so the draft distribution is one-hot at the
    proposed token and verification uses the same rules as the model-drafted
    path.
    """
    _check_budget([target], prompt, policy)
    rng = np.random.default_rng(policy.seed)
    t_sess = target.session()
    _prefill(t_sess, prompt)
    trace = DecodeTrace("prompt_lookup")
    out: list[int] = []
    context = list(prompt)
    rule = "greedy" if policy.greedy else config.acceptance
    vocab = target.vocab_size
    start = time.perf_counter()
    while len(out) < policy.max_tokens:
        n = min(config.block_size, policy.max_tokens - len(out) - 1)
        tokens = prompt_lookup_draft(context, n, max_order, min_order) if n > 0 else None
        tokens = tokens or []
        dists = [one_hot(t, vocab) for t in tokens]
        k, nxt, _ = verify_block(t_sess, context, tokens, dists, policy, config, rng)
        kind = TARGET if not tokens else BONUS if k == len(tokens) else CORRECTION
        block = BlockRecord(tokens, k, nxt, kind if nxt is not None else "none", rule)
        trace.blocks.append(block)
        stop = _emit(block, out, policy.max_tokens, policy.stop_at_eos)
        context = list(prompt) + out
        if stop:
            break
    trace.duration_s = time.perf_counter() - start
    trace.target_calls = t_sess.calls
    trace.tokens_emitted = len(out)
    return out, trace
