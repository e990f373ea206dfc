"""Training loops: continual pre-training, SFT and the staged/joint curriculum."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ..errors import InvalidArgument
from ..models.transformer import TinyTransformer
from ..models.vocab import Vocab
from ..numerics import Adam, LrSchedule, cross_entropy, lr_at
from ..numerics.tensor import Tensor
from .data import SftPair, dataset_checksum, encode_documents
from .packing import PACK_MODES, PackedRows, pack_sequences

LOSS_MASKS = ("all_tokens", "response_only")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 1
    lr_max: float = 3e-3
    lr_min: float = 3e-4
    warmup_ratio: float = 0.05
    schedule: str = "cosine"
    pack_to: int = 64
    pack_mode: str = "first_fit"
    seed: int = 0
    loss_mask: str = "response_only"
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise InvalidArgument("batch_size must be positive and epochs non-negative")
        if self.loss_mask not in LOSS_MASKS:
            raise InvalidArgument(f"loss_mask must be one of {LOSS_MASKS}")
        if self.pack_mode not in PACK_MODES:
            raise InvalidArgument(f"pack_mode must be one of {PACK_MODES}")

    def lr_schedule(self, total_steps: int) -> LrSchedule:
        return LrSchedule(self.lr_max, min(self.lr_min, self.lr_max), self.warmup_ratio, max(total_steps, 1),
                          self.schedule)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: TinyTransformer
    log: list[dict] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [r["loss"] for r in self.log]


# step_fn(batch, step) -> (loss tensor, extra log fields)
StepFn = Callable[[PackedRows, int], "tuple[Tensor, dict]"]


def batches_for(rows: PackedRows, config: TrainConfig) -> list[list[int]]:
    """Row indices per step: each epoch is a seeded shuffle cut into batches."""
    rng = np.random.default_rng(config.seed)
    out = []
    for _ in range(config.epochs):
        order = rng.permutation(len(rows))
        out.extend(order[i:i + config.batch_size].tolist() for i in range(0, len(order), config.batch_size))
    return out


def _clip(params: list[Tensor], max_norm: float) -> float:
    sq = sum(float((p.grad * p.grad).sum()) for p in params if p.grad is not None)
    norm = math.sqrt(sq)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


def run_steps(model: TinyTransformer, rows: PackedRows, config: TrainConfig, step_fn: StepFn,
              log_sink: Callable[[dict], None] | None = None, tag: str = "") -> TrainResult:
    """Generic loop: fresh Adam state, warmup + decay schedule, optional global-norm clipping."""
    plan = batches_for(rows, config)
    params = model.parameters()
    opt = Adam(params)
    schedule = config.lr_schedule(len(plan))
    log: list[dict] = []
    for step, batch in enumerate(plan):
        lr = lr_at(schedule, step + 1)
        opt.zero_grad()
        loss, extra = step_fn(rows.take(batch), step)
        loss.backward()
        gnorm = _clip(params, config.grad_clip)
        opt.step(lr)
        rec = {"stage": tag, "step": step, "lr": lr, "loss": loss.item(), "grad_norm": gnorm, **extra}
        log.append(rec)
        if log_sink is not None:
            log_sink(rec)
    return TrainResult(model, log)


def nll_step(model: TinyTransformer) -> StepFn:
    def step(batch: PackedRows, _step: int):
        logits = model.forward(batch.ids)
        return cross_entropy(logits, batch.targets, batch.mask), {}

    return step


def pretrain(model: TinyTransformer, corpus: Sequence[str], vocab: Vocab, config: TrainConfig,
             log_sink=None) -> TrainResult:
    """Next-token NLL over the packed corpus (all tokens, ``fill`` packing)."""
    if not corpus:
        raise InvalidArgument("empty pre-training corpus")
    docs = encode_documents(corpus, vocab)
    rows = pack_sequences(docs, config.pack_to, mode="fill")
    return run_steps(model, rows, config, nll_step(model), log_sink, tag="pretrain")


def pack_pairs(pairs: Sequence[SftPair], vocab: Vocab, config: TrainConfig) -> PackedRows:
    encoded = [p.encode(vocab) for p in pairs]
    seqs = [ids for ids, _ in encoded]
    flags = [fl for _, fl in encoded] if config.loss_mask == "response_only" else None
    return pack_sequences(seqs, config.pack_to, flags, mode=config.pack_mode)


def sft(model: TinyTransformer, pairs: Sequence[SftPair], vocab: Vocab, config: TrainConfig,
        log_sink=None, tag: str = "sft") -> TrainResult:
    """Masked NLL on packed prompt/response pairs; prompt tokens carry zero loss under ``response_only``."""
    if not pairs:
        raise InvalidArgument("empty SFT dataset")
    rows = pack_pairs(pairs, vocab, config)
    return run_steps(model, rows, config, nll_step(model), log_sink, tag=tag)


@dataclass(frozen=True)
class Stage:
    name: str
    pairs: tuple[SftPair, ...]
    config: TrainConfig


@dataclass(frozen=True)
class CurriculumSpec:
    stages: tuple[Stage, ...]
    mode: str = "staged"
    joint_config: TrainConfig | None = None

    def __post_init__(self):
        if self.mode not in ("staged", "joint"):
            raise InvalidArgument(f"curriculum mode must be staged or joint, got {self.mode!r}")
        if not self.stages:
            raise InvalidArgument("curriculum has no stages")
        for s in self.stages:
            if not s.pairs:
                raise InvalidArgument(f"stage {s.name!r} is empty")


@dataclass
class CurriculumResult:
    model: TinyTransformer
    log: list[dict]
    snapshots: list[dict]
    checksum: str


def run_curriculum(model: TinyTransformer, spec: CurriculumSpec, vocab: Vocab,
                   evaluate: Callable[[TinyTransformer], dict] | None = None, log_sink=None) -> CurriculumResult:
    """Staged: each stage in order with its own config and fresh optimizer state.

    Joint: the union of all stage datasets, shuffled, in a single run using
    ``joint_config`` (default: the last stage's config).
    """
    log: list[dict] = []
    snapshots: list[dict] = []
    everything = [p for s in spec.stages for p in s.pairs]
    if spec.mode == "staged":
        for stage in spec.stages:
            res = sft(model, stage.pairs, vocab, stage.config, log_sink, tag=stage.name)
            log.extend(res.log)
            snap = {"stage": stage.name, "steps": len(res.log), "checksum": dataset_checksum(stage.pairs)}
            if evaluate is not None:
                snap["eval"] = evaluate(model)
            snapshots.append(snap)
    else:
        config = spec.joint_config or spec.stages[-1].config
        rng = np.random.default_rng(config.seed)
        union = [everything[i] for i in rng.permutation(len(everything))]
        res = sft(model, union, vocab, replace(config), log_sink, tag="joint")
        log.extend(res.log)
        snap = {"stage": "joint", "steps": len(res.log), "checksum": dataset_checksum(union)}
        if evaluate is not None:
            snap["eval"] = evaluate(model)
        snapshots.append(snap)
    return CurriculumResult(model, log, snapshots, dataset_checksum(everything))


class JsonlSink:
    """Append metrics records to a line-delimited JSON file."""

    def __init__(self, path):
        self.f = open(path, "a", encoding="utf-8")

    def __call__(self, rec: dict) -> None:
        self.f.write(json.dumps(rec, sort_keys=True) + "\n")
        self.f.flush()

    def close(self) -> None:
        self.f.close()
