"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import InvalidArgument
from .tensor import Tensor

MAX_ENTRIES_PER_TENSOR = 256


def _central_difference(loss_fn, flat: np.ndarray, i: int, h: float) -> float:
    # fourth-order stencil: truncation O(h^4) keeps roundoff the dominant term
    orig = flat[i]
    values = []
    for step in (2, 1, -1, -2):
        flat[i] = orig + step * h
        values.append(loss_fn().item())
    flat[i] = orig
    f2, f1, fm1, fm2 = values
    return ((fm2 - f2) + 8 * (f1 - fm1)) / (12 * h)


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    epsilon: float = 1e-6,
    seed: int = 0,
    max_entries: int = MAX_ENTRIES_PER_TENSOR,
) -> float:
    """Max relative error ``|a - c| / (|a| + |c| + 1e-12)`` between backprop and central differences.

    ``loss_fn`` must recompute the forward pass from the current parameter
    values on each call. At most ``max_entries`` entries per tensor are probed.
    """
    if not 1e-6 <= epsilon <= 1e-4:
        raise InvalidArgument(f"epsilon must lie in [1e-6, 1e-4], got {epsilon}")
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        picks = np.arange(flat.size)
        if flat.size > max_entries:
            picks = rng.choice(flat.size, size=max_entries, replace=False)
        for i in picks:
            numeric = _central_difference(loss_fn, flat, i, epsilon)
            a = grad.reshape(-1)[i]
            err = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
