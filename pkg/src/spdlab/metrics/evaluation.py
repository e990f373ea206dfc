from __future__ import annotations

from dataclasses import replace
from typing import Callable, Iterable, Sequence

from ..decoding import DecodePolicy, DecodeTrace, autoregressive_decode
from ..models.vocab import BOS, EOS, Vocab
from .text import ScoreReport, score_pairs


def eval_generation(
    model_or_decoder,
    eval_set: Sequence[tuple[str, str]],
    policy: DecodePolicy,
    vocab: Vocab,
) -> ScoreReport:
    """Decode each prompt and score the character-level output against its reference.

    ``model_or_decoder`` is a language model (decoded autoregressively) or a
    callable ``(prompt_ids, policy) -> (token_ids, trace)``.
    """
    max_context = None
    if callable(model_or_decoder) and not hasattr(model_or_decoder, "session"):
        decode: Callable = model_or_decoder
        max_context = getattr(model_or_decoder, "max_context", None)
    else:
        max_context = model_or_decoder.max_context

        def decode(ids, pol):
            return autoregressive_decode(model_or_decoder, ids, pol)

    pairs = []
    for prompt, reference in eval_set:
        prompt_ids = [BOS] + vocab.encode(prompt)
        ids, _ = decode(prompt_ids, fit_policy(policy, len(prompt_ids), max_context))
        if EOS in ids:
            ids = ids[: ids.index(EOS)]
        pairs.append((list(vocab.decode(ids)), list(reference)))
    return score_pairs(pairs)


def fit_policy(policy: DecodePolicy, prompt_len: int, max_context: int | None) -> DecodePolicy:
    """Shrink ``max_tokens`` so the prompt plus generation fits the context window."""
    if max_context is None:
        return policy
    return replace(policy, max_tokens=max(0, min(policy.max_tokens, max_context - prompt_len + 1)))


def acceptance_stats(traces: Iterable[DecodeTrace]) -> dict:
    """Aggregate acceptance figures over traces.

    ``beta_mle`` is the per-token acceptance probability under an i.i.d.
    model: accepted draft tokens over accepted plus rejected ones.
    """
    traces = list(traces)
    proposed = sum(t.proposed for t in traces)
    accepted = sum(t.accepted for t in traces)
    emitted = sum(t.tokens_emitted for t in traces)
    calls = sum(t.target_calls for t in traces)
    drafted_blocks = [b for t in traces for b in t.blocks if b.proposed]
    rejections = sum(1 for b in drafted_blocks if b.kind == "correction")
    return {
        "acceptance_rate": accepted / proposed if proposed else 0.0,
        "mean_accepted_run": accepted / len(drafted_blocks) if drafted_blocks else 0.0,
        "tokens_per_target_call": emitted / calls if calls else 0.0,
        "beta_mle": accepted / (accepted + rejections) if accepted + rejections else 0.0,
        "proposed": proposed,
        "accepted": accepted,
        "tokens_emitted": emitted,
        "target_calls": calls,
        "draft_calls": sum(t.draft_calls for t in traces),
        "blocks": sum(len(t.blocks) for t in traces),
    }
