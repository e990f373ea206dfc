from __future__ import annotations

from typing import Protocol, Sequence

import numpy as np

from ..errors import InvalidArgument


class Session(Protocol):
    calls: int

    def logits(self, tokens: Sequence[int], last: int = 1) -> np.ndarray: ...


class LanguageModel(Protocol):
    """Anything mapping a token context to per-position next-token logits."""

    vocab_size: int
    max_context: int | None

    def logits(self, ids: Sequence[int]) -> np.ndarray: ...

    def session(self) -> Session: ...


def lm_logits(model: LanguageModel, ids: Sequence[int]) -> np.ndarray:
    """Teacher-forced logits of shape ``(len(ids), vocab)``; row i sees ids[: i + 1] only."""
    if len(ids) == 0:
        raise InvalidArgument("empty context")
    if model.max_context is not None and len(ids) > model.max_context:
        raise InvalidArgument(f"context length {len(ids)} exceeds max_context {model.max_context}")
    return model.logits(ids)
