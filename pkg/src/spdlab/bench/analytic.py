"""Cost model for draft-then-verify decoding under i.i.d. per-token acceptance."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgument


def expected_tokens_per_block(beta: float, n: int, bonus: bool = True) -> float:
    """Mean tokens emitted by one verified block of ``n`` drafted tokens."""
    _check(beta, n)
    if not bonus:
        # accepted prefix, plus the correction token when a rejection happens
        return float(sum(beta ** i for i in range(1, n + 1)) + (1 - beta ** n))
    if beta == 1.0:
        return float(n + 1)
    return (1.0 - beta ** (n + 1)) / (1.0 - beta)


def analytic_speedup(beta: float, n: int, r: float, bonus: bool = True) -> float:
    """Predicted speedup over autoregressive decoding.

    One block costs ``n`` draft calls at relative cost ``r`` plus one target
    call, and emits ``expected_tokens_per_block`` tokens.
    """
    if r < 0:
        raise InvalidArgument("cost ratio must be non-negative")
    return expected_tokens_per_block(beta, n, bonus) / (n * r + 1.0)


def monte_carlo_speedup(beta: float, n: int, r: float, bonus: bool = True, blocks: int = 200_000,
                        seed: int = 0) -> float:
    """Simulation oracle for :func:`analytic_speedup`."""
    _check(beta, n)
    rng = np.random.default_rng(seed)
    accept = rng.random((blocks, n)) < beta
    # length of the all-true prefix of each row
    run = np.where(accept.all(axis=1), n, np.argmin(accept, axis=1))
    full = run == n
    tokens = run + np.where(full, 1 if bonus else 0, 1)
    return float(tokens.mean()) / (n * r + 1.0)


def _check(beta: float, n: int) -> None:
    if not 0.0 <= beta <= 1.0:
        raise InvalidArgument(f"acceptance probability must lie in [0, 1], got {beta}")
    if n < 1:
        raise InvalidArgument("block size must be at least 1")
