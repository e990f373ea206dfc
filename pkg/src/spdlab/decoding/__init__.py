from .engine import (
    autoregressive_decode,
    draft_block,
    residual_distribution,
    residual_sample,
    speculative_decode,
    verify_block,
)
from .lookup import prompt_lookup_decode, prompt_lookup_draft
from .oracle import exact_match_marginal_closed_form, first_token_marginal, total_variation
from .policy import DecodePolicy, SpecDecodeConfig, top_p_filter
from .trace import BlockRecord, DecodeTrace

__all__ = [
    "BlockRecord", "DecodePolicy", "DecodeTrace", "SpecDecodeConfig",
    "autoregressive_decode", "draft_block", "exact_match_marginal_closed_form",
    "first_token_marginal", "prompt_lookup_decode", "prompt_lookup_draft",
    "residual_distribution", "residual_sample", "speculative_decode",
    "top_p_filter", "total_variation", "verify_block",
]
