"""Pure-Python implementations of the hot kernels.

Semantics match ``_ckernels.pyx`` bit for bit: every reduction is a
left-to-right running sum in the same order.
"""

from __future__ import annotations

import numpy as np

TOP_P_SLACK = 1e-12


def top_p_filter(probs: np.ndarray, p: float) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    cut = int(np.searchsorted(cum >= p - TOP_P_SLACK, True))
    cut = min(cut, len(probs) - 1)
    keep = order[: cut + 1]
    out = np.zeros_like(probs)
    out[keep] = probs[keep] / cum[cut]
    return out


def residual(p_target: np.ndarray, p_draft: np.ndarray) -> tuple[np.ndarray, float]:
    diff = np.maximum(np.asarray(p_target, float) - np.asarray(p_draft, float), 0.0)
    return diff, float(np.cumsum(diff)[-1])


def sample_index(probs: np.ndarray, u: float) -> int:
    cum = np.cumsum(probs)
    idx = int(np.searchsorted(cum, u * cum[-1], side="right"))
    if idx >= len(probs):
        idx = int(np.flatnonzero(np.asarray(probs) > 0)[-1])
    return idx


def lcs_length(a, b) -> int:
    a, b = list(a), list(b)
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def suffix_match(tokens, max_order: int) -> tuple[int, int]:
    """Longest suffix (length <= max_order) recurring earlier; most recent occurrence wins.

    Returns ``(continuation_start, order)`` or ``(-1, 0)``. An occurrence counts
    only if at least one token follows it inside ``tokens``.
    """
    toks = list(tokens)
    n = len(toks)
    for order in range(min(max_order, n - 1), 0, -1):
        suffix = toks[n - order:]
        for start in range(n - order - 1, -1, -1):
            if toks[start:start + order] == suffix:
                return start + order, order
    return -1, 0
