"""Rouge-N, Rouge-L and BLEU-4 over token sequences (single reference)."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .. import _kernels
from ..errors import InvalidArgument


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float


def _prf(overlap: float, n_cand: int, n_ref: int) -> PRF:
    if n_cand == 0 or n_ref == 0 or overlap == 0:
        return PRF(0.0, 0.0, 0.0)
    p, r = overlap / n_cand, overlap / n_ref
    return PRF(p, r, 2 * p * r / (p + r))


def ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence, reference: Sequence, n: int) -> PRF:
    if n < 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    cand, ref = ngrams(candidate, n), ngrams(reference, n)
    if not cand and not ref and len(candidate) and list(candidate) == list(reference):
        # both shorter than n: an exact copy still scores as a perfect match
        return PRF(1.0, 1.0, 1.0)
    overlap = sum((cand & ref).values())
    return _prf(overlap, sum(cand.values()), sum(ref.values()))


def _as_ids(a: Sequence, b: Sequence) -> tuple[list[int], list[int]]:
    index: dict = {}
    return [index.setdefault(t, len(index)) for t in a], [index.setdefault(t, len(index)) for t in b]


def rouge_l(candidate: Sequence, reference: Sequence) -> PRF:
    ca, rb = _as_ids(candidate, reference)
    return _prf(_kernels.lcs_length(ca, rb), len(ca), len(rb))


def bleu_4(candidate: Sequence, reference: Sequence) -> float:
    """Sentence BLEU-4: uniform weights, brevity penalty, add-one smoothing on orders 2-4."""
    c, r = len(candidate), len(reference)
    if c == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        cand, ref = ngrams(candidate, n), ngrams(reference, n)
        matches, total = sum((cand & ref).values()), sum(cand.values())
        if n == 1:
            if matches == 0:
                return 0.0
            log_sum += math.log(matches / total)
        else:
            log_sum += math.log((matches + 1) / (total + 1))
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / 4)


@dataclass
class ScoreReport:
    rouge1: PRF
    rouge2: PRF
    rougeL: PRF
    bleu4: float
    samples: int
    per_sample: list[dict] = field(default_factory=list, repr=False)

    def to_dict(self, include_samples: bool = False) -> dict:
        d = {
            "rouge1": asdict(self.rouge1), "rouge2": asdict(self.rouge2), "rougeL": asdict(self.rougeL),
            "bleu4": self.bleu4, "samples": self.samples,
        }
        if include_samples:
            d["per_sample"] = self.per_sample
        return d


def _mean_prf(items: list[PRF]) -> PRF:
    k = len(items)
    return PRF(sum(x.precision for x in items) / k, sum(x.recall for x in items) / k, sum(x.f1 for x in items) / k)


def score_pairs(pairs: Sequence[tuple[Sequence, Sequence]]) -> ScoreReport:
    """Macro-averaged scores over ``(candidate, reference)`` pairs."""
    if not pairs:
        raise InvalidArgument("no pairs to score")
    r1, r2, rl, bl, rows = [], [], [], [], []
    for cand, ref in pairs:
        a, b, c, d = rouge_n(cand, ref, 1), rouge_n(cand, ref, 2), rouge_l(cand, ref), bleu_4(cand, ref)
        r1.append(a), r2.append(b), rl.append(c), bl.append(d)
        rows.append({"rouge1": a.f1, "rouge2": b.f1, "rougeL": c.f1, "bleu4": d})
    return ScoreReport(_mean_prf(r1), _mean_prf(r2), _mean_prf(rl), sum(bl) / len(bl), len(pairs), rows)
