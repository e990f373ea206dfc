"""Offline teacher logits and mixed KL + SFT distillation."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import DataError, InvalidArgument
from ..models.vocab import Vocab
from ..numerics import kl_loss, log_softmax_array, mixed_distill_terms
from .data import SftPair
from .loops import TrainConfig, TrainResult, pack_pairs, run_steps

STORE_MAGIC = b"SPDLTLGT"
STORE_VERSION = 1


@dataclass
class StoreEntry:
    positions: np.ndarray  # sequence positions t whose next-token distribution is stored
    top_ids: np.ndarray | None  # (P, K) int64; None when the full vocabulary is stored
    values: np.ndarray  # (P, K) log-probabilities, or (P, V) when full
    remainder: np.ndarray | None  # (P,) log of the mass outside the top K


@dataclass
class TeacherLogitStore:
    """Teacher log-probabilities per record id, at every loss-active position.

    With ``top_k < vocab_size`` each position keeps its K most probable
    tokens plus one aggregated remainder bucket.
    """

    vocab_size: int
    top_k: int
    entries: dict[str, StoreEntry] = field(default_factory=dict)

    def logits(self, record_id: str) -> tuple[np.ndarray, np.ndarray]:
        """``(positions, logits)``; the remainder mass is spread evenly over the unstored tokens."""
        if record_id not in self.entries:
            raise DataError(f"teacher logit store has no entry for record {record_id!r}")
        e = self.entries[record_id]
        if e.top_ids is None:
            return e.positions, e.values
        rest = self.vocab_size - self.top_k
        full = np.full((len(e.positions), self.vocab_size), -np.inf)
        if rest > 0:
            full[:] = (e.remainder - np.log(rest))[:, None]
        np.put_along_axis(full, e.top_ids, e.values, axis=1)
        return e.positions, full

    def save(self, path) -> None:
        """Layout: magic, u32 version, u32 index length, JSON index, then float64/int64 payload."""
        index = []
        chunks = []
        offset = 0
        for rid, e in self.entries.items():
            parts = [np.asarray(e.positions, "<i8")]
            if e.top_ids is not None:
                parts += [np.asarray(e.top_ids, "<i8"), np.asarray(e.values, "<f8"), np.asarray(e.remainder, "<f8")]
            else:
                parts += [np.asarray(e.values, "<f8")]
            blob = b"".join(p.tobytes() for p in parts)
            index.append({"id": rid, "n": int(len(e.positions)), "offset": offset, "nbytes": len(blob)})
            chunks.append(blob)
            offset += len(blob)
        head = json.dumps({"vocab_size": self.vocab_size, "top_k": self.top_k, "records": index}).encode()
        with open(path, "wb") as f:
            f.write(STORE_MAGIC)
            f.write(struct.pack("<II", STORE_VERSION, len(head)))
            f.write(head)
            for c in chunks:
                f.write(c)

    @classmethod
    def load(cls, path) -> "TeacherLogitStore":
        raw = Path(path).read_bytes()
        if len(raw) < 16 or raw[:8] != STORE_MAGIC:
            raise DataError(f"{path}: not a teacher logit store")
        version, hlen = struct.unpack("<II", raw[8:16])
        if version != STORE_VERSION:
            raise DataError(f"{path}: unsupported store version {version}")
        head = json.loads(raw[16:16 + hlen])
        base = 16 + hlen
        store = cls(head["vocab_size"], head["top_k"])
        full = store.top_k >= store.vocab_size
        for rec in head["records"]:
            n, pos = rec["n"], base + rec["offset"]

            def take(dtype, count):
                nonlocal pos
                if pos + 8 * count > len(raw):
                    raise DataError(f"{path}: truncated in record {rec['id']!r}")
                arr = np.frombuffer(raw, dtype=dtype, count=count, offset=pos).copy()
                pos += 8 * count
                return arr

            positions = take("<i8", n).astype(np.int64)
            if full:
                values = take("<f8", n * store.vocab_size).reshape(n, store.vocab_size).astype(np.float64)
                store.entries[rec["id"]] = StoreEntry(positions, None, values, None)
            else:
                k = store.top_k
                ids = take("<i8", n * k).reshape(n, k).astype(np.int64)
                values = take("<f8", n * k).reshape(n, k).astype(np.float64)
                rem = take("<f8", n).astype(np.float64)
                store.entries[rec["id"]] = StoreEntry(positions, ids, values, rem)
        return store


def export_teacher_logits(teacher, pairs: Sequence[SftPair], vocab: Vocab, top_k: int | None = None,
                          loss_mask: str = "response_only") -> TeacherLogitStore:
    """Run the teacher over each record alone and keep log-probabilities at loss-active positions."""
    v = teacher.vocab_size
    k = v if top_k is None else top_k
    if not 1 <= k <= v:
        raise InvalidArgument(f"top_k must lie in [1, {v}]")
    store = TeacherLogitStore(v, k)
    for p in pairs:
        ids, flags = p.encode(vocab)
        active = np.array([t for t in range(len(ids) - 1) if loss_mask == "all_tokens" or flags[t + 1]])
        logp = log_softmax_array(teacher.logits(ids)[active])
        if k == v:
            store.entries[p.id] = StoreEntry(active, None, logp, None)
            continue
        top = np.argsort(-logp, axis=1, kind="stable")[:, :k]
        kept = np.take_along_axis(logp, top, axis=1)
        rest = np.clip(1.0 - np.exp(kept).sum(axis=1), 1e-300, None)
        store.entries[p.id] = StoreEntry(active, top, kept, np.log(rest))
    return store


@dataclass(frozen=True)
class DistillConfig:
    alpha: float = 0.5
    tau: float = 2.0
    # records keep their own rows so the student sees exactly the context the teacher was run on
    train: TrainConfig = TrainConfig(pack_mode="single")
    tau_squared: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidArgument(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.tau > 0:
            raise InvalidArgument("tau must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _teacher_rows(store: TeacherLogitStore, pairs: Sequence[SftPair], batch) -> tuple[np.ndarray, np.ndarray]:
    """Scatter stored teacher logits into the packed layout; returns (logits, covered-mask)."""
    b, w = batch.ids.shape
    out = np.zeros((b, w, store.vocab_size))
    covered = np.zeros((b, w), dtype=bool)
    for r, segs in enumerate(batch.segments):
        for doc, row_off, doc_off, length in segs:
            positions, logits = store.logits(pairs[doc].id)
            sel = (positions >= doc_off) & (positions < doc_off + length - 1)
            cols = positions[sel] - doc_off + row_off
            out[r, cols] = logits[sel]
            covered[r, cols] = True
    return out, covered


def distill(student, store: TeacherLogitStore, pairs: Sequence[SftPair], vocab: Vocab, config: DistillConfig,
            log_sink=None) -> TrainResult:
    """Minimize ``alpha * KL(teacher || student) + (1 - alpha) * NLL`` over packed records.

    Batching is identical to :func:`sft` with the same ``TrainConfig``. The KL
    and SFT components are logged separately at every step.
    """
    missing = [p.id for p in pairs if p.id not in store.entries]
    if missing:
        raise DataError(f"teacher logit store has no entry for record {missing[0]!r}")
    if store.vocab_size != student.vocab_size:
        raise InvalidArgument("teacher store and student vocabularies differ")
    rows = pack_pairs(pairs, vocab, config.train)

    def step(batch, _step):
        teacher, covered = _teacher_rows(store, pairs, batch)
        if np.any(batch.mask & ~covered):
            raise DataError("teacher logit store does not cover every loss-active position")
        logits = student.forward(batch.ids)
        # -inf teacher entries only matter where covered; masked rows get a harmless uniform row
        teacher = np.where(covered[..., None], teacher, 0.0)
        total, kl, sft_term = mixed_distill_terms(teacher, logits, batch.targets, batch.mask,
                                                  config.alpha, config.tau, config.tau_squared)
        return total, {"kl": kl.item(), "sft": sft_term.item(), "alpha": config.alpha, "tau": config.tau}

    return run_steps(student, rows, config.train, step, log_sink, tag="distill")


def mean_token_kl(teacher, student, pairs: Sequence[SftPair], vocab: Vocab, tau: float = 1.0) -> float:
    """Mean KL(teacher || student) over response positions, each record decoded alone."""
    total, count = 0.0, 0
    for p in pairs:
        ids, flags = p.encode(vocab)
        active = np.array([flags[t + 1] for t in range(len(ids) - 1)] + [False])
        kl = kl_loss(teacher.logits(ids), student.logits(ids), tau, mask=active)
        n = int(active.sum())
        total += kl.item() * n
        count += n
    return total / count


def heldout_nll(model, pairs: Sequence[SftPair], vocab: Vocab) -> float:
    """Mean response-token negative log-likelihood, records decoded alone."""
    total, count = 0.0, 0
    for p in pairs:
        ids, flags = p.encode(vocab)
        logp = log_softmax_array(model.logits(ids))
        for t in range(len(ids) - 1):
            if flags[t + 1]:
                total -= logp[t, ids[t + 1]]
                count += 1
    return total / count
