"""Autoregressive and speculative (draft-then-verify) decoding."""

from __future__ import annotations

import time
from typing import Sequence

import numpy as np

from .. import _kernels
from ..errors import InternalError, InvalidArgument
from ..models.vocab import EOS
from .policy import DecodePolicy, SpecDecodeConfig, sample
from .trace import BONUS, CORRECTION, TARGET, BlockRecord, DecodeTrace

RESIDUAL_FLOOR = 1e-12


def _session(model_or_session):
    return model_or_session.session() if hasattr(model_or_session, "session") else model_or_session


def _check_budget(models, prompt: Sequence[int], policy: DecodePolicy) -> None:
    if len(prompt) == 0:
        raise InvalidArgument("prompt must not be empty")
    needed = len(prompt) + max(policy.max_tokens - 1, 0)
    for m in models:
        if m.max_context is not None and needed > m.max_context:
            raise InvalidArgument(
                f"prompt of {len(prompt)} plus {policy.max_tokens} new tokens exceeds max_context {m.max_context}"
            )


def _prefill(session, prompt: Sequence[int]) -> None:
    # prompt processing is excluded from call counts and timing
    if len(prompt) > 1:
        session.logits(prompt[:-1], last=1)
    session.calls = 0


def residual_distribution(p_target, p_draft) -> np.ndarray | None:
    """``max(p_T - p_D, 0)`` normalized, or ``None`` when the residual mass is below 1e-12."""
    res, mass = _kernels.residual(np.asarray(p_target, float), np.asarray(p_draft, float))
    if mass < RESIDUAL_FLOOR:
        return None
    return res / mass


def residual_sample(p_target, p_draft, rng: np.random.Generator) -> int:
    """Sample the residual distribution; falls back to ``p_target`` when it vanishes."""
    p_target = np.asarray(p_target, float)
    res, mass = _kernels.residual(p_target, np.asarray(p_draft, float))
    if mass < RESIDUAL_FLOOR:
        return sample(p_target, rng)
    return sample(res, rng)


def autoregressive_decode(model, prompt: Sequence[int], policy: DecodePolicy) -> tuple[list[int], DecodeTrace]:
    _check_budget([model], prompt, policy)
    rng = np.random.default_rng(policy.seed)
    session = _session(model)
    _prefill(session, prompt)
    trace = DecodeTrace("autoregressive")
    out: list[int] = []
    context = list(prompt)
    start = time.perf_counter()
    while len(out) < policy.max_tokens:
        dist = policy.distribution(session.logits(context, last=1)[0])
        tok = policy.pick(dist, rng)
        out.append(tok)
        context.append(tok)
        trace.blocks.append(BlockRecord([], 0, tok, TARGET, "autoregressive"))
        if policy.stop_at_eos and tok == EOS:
            break
    trace.duration_s = time.perf_counter() - start
    trace.target_calls = session.calls
    trace.tokens_emitted = len(out)
    return out, trace


def draft_block(draft, context: Sequence[int], n: int, policy: DecodePolicy,
                rng: np.random.Generator | None = None) -> tuple[list[int], list[np.ndarray]]:
    """Propose ``n`` tokens autoregressively; returns them with the distribution each was drawn from."""
    session = _session(draft)
    rng = rng if rng is not None else np.random.default_rng(policy.seed)
    tokens: list[int] = []
    dists: list[np.ndarray] = []
    ctx = list(context)
    for _ in range(n):
        dist = policy.distribution(session.logits(ctx, last=1)[0])
        tok = policy.pick(dist, rng)
        tokens.append(tok)
        dists.append(dist)
        ctx.append(tok)
    return tokens, dists


def verify_block(target, context: Sequence[int], draft_tokens: Sequence[int], draft_dists: Sequence[np.ndarray],
                 policy: DecodePolicy, config: SpecDecodeConfig, rng: np.random.Generator | None = None,
                 ) -> tuple[int, int | None, list[np.ndarray]]:
    """One target forward over ``context + draft_tokens``; returns ``(accepted, next_token, target_dists)``.

    ``next_token`` is the correction at the first rejected position, the
    bonus token after a fully accepted block, or ``None`` when a non-empty
    block is fully accepted and bonus tokens are disabled.
    """
    session = _session(target)
    rng = rng if rng is not None else np.random.default_rng(policy.seed)
    n = len(draft_tokens)
    logits = session.logits(list(context) + list(draft_tokens), last=n + 1)
    p_target = [policy.distribution(row, truncate=config.target_top_p) for row in logits]

    for i, (tok, q) in enumerate(zip(draft_tokens, draft_dists)):
        p = p_target[i]
        if policy.greedy:
            if tok == int(np.argmax(p)):
                continue
            return i, int(np.argmax(p)), p_target
        if config.acceptance == "standard_ratio":
            if q[tok] <= 0.0:
                raise InternalError(f"draft proposed token {tok} with zero draft probability")
            if rng.random() * q[tok] < p[tok]:
                continue
        else:
            if sample(p, rng) == tok:
                continue
        return i, residual_sample(p, q, rng), p_target

    # an empty block is a plain target step, so it emits even with bonus tokens off
    if not config.bonus and n > 0:
        return n, None, p_target
    return n, policy.pick(p_target[n], rng), p_target


def _emit(block: BlockRecord, out: list[int], budget: int, stop_at_eos: bool) -> bool:
    """Append the block's tokens to ``out``; returns True when decoding must stop."""
    new = block.proposed[: block.accepted] + ([] if block.token is None else [block.token])
    keep = len(new)
    if stop_at_eos and EOS in new:
        keep = new.index(EOS) + 1
    keep = min(keep, budget - len(out))
    block.truncate(keep)
    out.extend(new[:keep])
    return len(out) >= budget or (stop_at_eos and EOS in new[:keep])


def speculative_decode(target, draft, prompt: Sequence[int], config: SpecDecodeConfig,
                       policy: DecodePolicy) -> tuple[list[int], DecodeTrace]:
    """Draft ``n`` tokens, verify them with one target forward, extend, repeat."""
    _check_budget([target, draft], prompt, policy)
    rng = np.random.default_rng(policy.seed)
    t_sess, d_sess = target.session(), draft.session()
    _prefill(t_sess, prompt)
    _prefill(d_sess, prompt)
    trace = DecodeTrace("speculative")
    out: list[int] = []
    context = list(prompt)
    rule = "greedy" if policy.greedy else config.acceptance
    start = time.perf_counter()
    while len(out) < policy.max_tokens:
        n = min(config.block_size, policy.max_tokens - len(out) - 1)
        tokens, dists = draft_block(d_sess, context, n, policy, rng)
        k, nxt, _ = verify_block(t_sess, context, tokens, dists, policy, config, rng)
        kind = TARGET if n == 0 else BONUS if k == n else CORRECTION
        block = BlockRecord(tokens, k, nxt, kind if nxt is not None else "none", rule)
        trace.blocks.append(block)
        stop = _emit(block, out, policy.max_tokens, policy.stop_at_eos)
        context = list(prompt) + out
        if stop:
            break
    trace.duration_s = time.perf_counter() - start
    trace.draft_calls = d_sess.calls
    trace.target_calls = t_sess.calls
    trace.tokens_emitted = len(out)
    return out, trace
