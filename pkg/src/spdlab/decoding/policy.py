from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import _kernels
from ..errors import InvalidArgument
from ..numerics.losses import softmax_array

MODES = ("greedy", "top_p")
RULES = ("standard_ratio", "paper_exact_match")


def top_p_filter(probs, p: float) -> np.ndarray:
    """Nucleus truncation.

    Keeps the shortest descending-probability prefix (ties toward the lower id)
    whose mass reaches ``p``, zeroes the rest and renormalizes.
    """
    if not 0.0 < p <= 1.0:
        raise InvalidArgument(f"top-p must lie in (0, 1], got {p}")
    probs = np.asarray(probs, dtype=np.float64)
    if abs(probs.sum() - 1.0) > 1e-9:
        raise InvalidArgument("top_p_filter expects a normalized distribution")
    return _kernels.top_p_filter(probs, p)


def one_hot(index: int, size: int) -> np.ndarray:
    out = np.zeros(size)
    out[index] = 1.0
    return out


@dataclass(frozen=True)
class DecodePolicy:
    mode: str = "greedy"
    p: float = 0.7
    temperature: float = 1.0
    max_tokens: int = 32
    seed: int = 0
    stop_at_eos: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidArgument(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 < self.p <= 1.0:
            raise InvalidArgument(f"p must lie in (0, 1], got {self.p}")
        if not self.temperature > 0:
            raise InvalidArgument("temperature must be positive")
        if self.max_tokens < 0:
            raise InvalidArgument("max_tokens must be non-negative")

    @property
    def greedy(self) -> bool:
        return self.mode == "greedy"

    def distribution(self, logits: np.ndarray, truncate: bool = True) -> np.ndarray:
        """Policy-adjusted next-token distribution for one logit row.

        Greedy gives the one-hot argmax (lowest id on ties). Top-p applies
        temperature, then nucleus truncation unless ``truncate`` is false.
        """
        if self.greedy:
            return one_hot(int(np.argmax(logits)), len(logits))
        probs = softmax_array(logits, self.temperature)
        return _kernels.top_p_filter(probs, self.p) if truncate else probs

    def pick(self, dist: np.ndarray, rng: np.random.Generator) -> int:
        if self.greedy:
            return int(np.argmax(dist))
        return sample(dist, rng)

    def to_dict(self) -> dict:
        return asdict(self)


def sample(dist: np.ndarray, rng: np.random.Generator) -> int:
    return int(_kernels.sample_index(dist, rng.random()))


@dataclass(frozen=True)
class SpecDecodeConfig:
    block_size: int = 3
    acceptance: str = "standard_ratio"
    bonus: bool = True
    # False: top-p shapes only the draft proposals; the target verifies with
    # its temperature-softmax distribution
    target_top_p: bool = True

    def __post_init__(self):
        if self.block_size < 1:
            raise InvalidArgument(f"block size must be >= 1, got {self.block_size}")
        if self.acceptance not in RULES:
            raise InvalidArgument(f"acceptance must be one of {RULES}, got {self.acceptance!r}")

    def to_dict(self) -> dict:
        return asdict(self)
