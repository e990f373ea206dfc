"""Desk-scale experiment pipeline: synthetic suite, target and draft training, distillation, benchmarks.

Every step is a pure function of a :class:`LabConfig` and seeds, so reruns
reproduce checkpoints byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from importlib import resources
from typing import Callable

from .bench import BenchConfig, BenchReport, run_bench
from .decoding import DecodePolicy
from .errors import InvalidArgument
from .metrics import eval_generation
from .models import BOS, TinyTransformer, TransformerConfig, Vocab, build_vocab, init_transformer
from .training import (CurriculumSpec, DistillConfig, SftPair, Stage, SyntheticSuite, TeacherLogitStore,
                       TrainConfig, distill, export_teacher_logits, heldout_nll, make_suite, mean_token_kl,
                       pretrain, run_curriculum, sft)
from .training.data import suite_vocab_text

ARMS = ("staged", "joint", "no_cpt")


@dataclass(frozen=True)
class SuiteConfig:
    seed: int = 0
    world_seed: int = 7
    cpt_docs: int = 1200
    n_stage1: int = 600
    n_stage2: int = 600
    n_eval: int = 48
    n_heldout: int = 64
    n_bench: int = 32


@dataclass(frozen=True)
class ModelRecipe:
    """Architecture plus the CPT / stage-1 / stage-2 training schedule."""

    d_model: int = 32
    n_layers: int = 1
    n_heads: int = 2
    d_ff: int = 64
    max_context: int = 128
    init_seed: int = 1
    lr: float = 1e-2
    cpt_epochs: int = 3
    stage1_epochs: int = 1
    stage2_epochs: int = 3
    batch_size: int = 16
    stage2_batch_size: int = 8
    pack_to: int = 96

    def model_config(self, vocab_size: int, seed_offset: int = 0) -> TransformerConfig:
        return TransformerConfig(vocab_size, self.d_model, self.n_layers, self.n_heads, self.d_ff,
                                 self.max_context, self.init_seed + seed_offset)

    def train_config(self, epochs: int, batch_size: int | None = None, seed: int = 0) -> TrainConfig:
        return TrainConfig(batch_size=batch_size or self.batch_size, epochs=epochs, lr_max=self.lr,
                           lr_min=self.lr / 10, pack_to=self.pack_to, seed=seed)

    def stage1_config(self, seed: int = 0) -> TrainConfig:
        # constant at the floor the CPT cosine decays to
        return replace(self.train_config(self.stage1_epochs, seed=seed), lr_max=self.lr / 10, schedule="constant")


@dataclass(frozen=True)
class DistillRecipe:
    alpha: float = 0.5
    tau: float = 2.0
    epochs: int = 12
    lr: float = 1e-2
    batch_size: int = 16
    top_k: int | None = None
    tau_squared: bool = False
    include_stage1: bool = False

    def config(self, pack_to: int, alpha: float | None = None, tau: float | None = None) -> DistillConfig:
        train = TrainConfig(batch_size=self.batch_size, epochs=self.epochs, lr_max=self.lr, lr_min=self.lr / 10,
                            pack_to=pack_to, pack_mode="single")
        return DistillConfig(self.alpha if alpha is None else alpha, self.tau if tau is None else tau, train,
                             self.tau_squared)


TARGET_RECIPE = ModelRecipe(d_model=192, n_layers=3, n_heads=6, d_ff=768, lr=2e-3, cpt_epochs=2)
DRAFT_RECIPE = ModelRecipe()
CURRICULUM_RECIPE = ModelRecipe(d_model=64, n_layers=2, n_heads=2, d_ff=128, lr=5e-3)


@dataclass(frozen=True)
class LabConfig:
    suite: SuiteConfig = SuiteConfig()
    target: ModelRecipe = TARGET_RECIPE
    draft: ModelRecipe = DRAFT_RECIPE
    curriculum: ModelRecipe = CURRICULUM_RECIPE
    distill: DistillRecipe = DistillRecipe()
    eval_max_tokens: int = 60

    @classmethod
    def from_dict(cls, d: dict | None) -> "LabConfig":
        return _from_dict(cls, d or {}, "lab")

    def to_dict(self) -> dict:
        return asdict(self)


def _from_dict(cls, d: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in d.items():
        if key not in known:
            raise InvalidArgument(f"{where}.{key}: unknown field")
        default = getattr(cls(), key)
        kwargs[key] = _from_dict(type(default), value, f"{where}.{key}") if is_dataclass(default) else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise InvalidArgument(f"{where}: {exc}") from exc


def config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


def build_suite(cfg: SuiteConfig) -> tuple[SyntheticSuite, Vocab]:
    suite = make_suite(cfg.seed, cfg.cpt_docs, cfg.n_stage1, cfg.n_stage2, cfg.n_eval, cfg.n_heldout, cfg.n_bench,
                       cfg.world_seed)
    return suite, build_vocab(suite_vocab_text(suite))


def train_recipe(recipe: ModelRecipe, suite: SyntheticSuite, vocab: Vocab, arm: str = "staged", seed: int = 0,
                 log_sink=None) -> TinyTransformer:
    """CPT then curriculum SFT.

    ``staged``: stage 1 then stage 2. ``joint``: one run over the union,
    with the stage-2 schedule. ``no_cpt``: stage 2 only, from initialization.
    """
    if arm not in ARMS:
        raise InvalidArgument(f"arm must be one of {ARMS}, got {arm!r}")
    model = init_transformer(recipe.model_config(vocab.size, seed))
    s2_config = recipe.train_config(recipe.stage2_epochs, recipe.stage2_batch_size, seed)
    if arm == "no_cpt":
        sft(model, suite.stage2, vocab, s2_config, log_sink, tag="stage2")
        return model
    pretrain(model, suite.cpt_corpus, vocab, recipe.train_config(recipe.cpt_epochs, seed=seed), log_sink)
    stages = (
        Stage("stage1", tuple(suite.stage1), recipe.stage1_config(seed)),
        Stage("stage2", tuple(suite.stage2), s2_config),
    )
    spec = CurriculumSpec(stages, mode=arm, joint_config=s2_config if arm == "joint" else None)
    run_curriculum(model, spec, vocab, log_sink=log_sink)
    return model


def domain_rouge1(model, suite: SyntheticSuite, vocab: Vocab, max_tokens: int = 60) -> float:
    pairs = [(p.prompt, p.response) for p in suite.eval_domain]
    return eval_generation(model, pairs, DecodePolicy(max_tokens=max_tokens), vocab).rouge1.f1


def curriculum_arms(cfg: LabConfig, seeds=(0, 1, 2), progress: Callable[[str], None] | None = None) -> list[dict]:
    """Domain-eval Rouge-1 of the staged, joint and no-CPT arms, one row per seed.

    Each seed redraws the suite and the initialization.
    """
    rows = []
    for seed in seeds:
        suite, vocab = build_suite(replace(cfg.suite, seed=seed))
        row = {"seed": seed}
        for arm in ARMS:
            model = train_recipe(cfg.curriculum, suite, vocab, arm, seed)
            row[arm] = domain_rouge1(model, suite, vocab, cfg.eval_max_tokens)
            if progress:
                progress(f"seed {seed} {arm}: rouge1 {row[arm]:.4f}")
        rows.append(row)
    return rows


def encode_prompts(pairs: list[SftPair], vocab: Vocab) -> list[list[int]]:
    return [[BOS] + vocab.encode(p.prompt) for p in pairs]


@dataclass
class Lab:
    """Lazily trained target, draft, teacher store and distilled draft for one configuration."""

    config: LabConfig = field(default_factory=LabConfig)
    progress: Callable[[str], None] | None = None
    log_sink: Callable[[dict], None] | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.suite, self.vocab = build_suite(self.config.suite)

    def _say(self, msg: str) -> None:
        if self.progress:
            self.progress(msg)

    def _get(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    @property
    def target(self) -> TinyTransformer:
        def build():
            self._say("training target")
            return train_recipe(self.config.target, self.suite, self.vocab, log_sink=self.log_sink)
        return self._get("target", build)

    @property
    def draft(self) -> TinyTransformer:
        """Draft after CPT and staged SFT, before distillation."""
        def build():
            self._say("training draft")
            return train_recipe(self.config.draft, self.suite, self.vocab, log_sink=self.log_sink)
        return self._get("draft", build)

    @property
    def distill_pairs(self) -> list[SftPair]:
        return self.suite.stage2 + (self.suite.stage1 if self.config.distill.include_stage1 else [])

    @property
    def store(self) -> TeacherLogitStore:
        def build():
            self._say("exporting teacher logits")
            return export_teacher_logits(self.target, self.distill_pairs, self.vocab, self.config.distill.top_k)
        return self._get("store", build)

    def distilled(self, alpha: float | None = None, tau: float | None = None) -> TinyTransformer:
        rec = self.config.distill
        key = ("distilled", rec.alpha if alpha is None else alpha, rec.tau if tau is None else tau)

        def build():
            self._say(f"distilling draft (alpha={key[1]}, tau={key[2]})")
            student = self.draft.copy()
            distill(student, self.store, self.distill_pairs, self.vocab,
                    rec.config(self.config.draft.pack_to, alpha, tau), self.log_sink)
            return student
        return self._get(key, build)

    def heldout_metrics(self, model) -> dict:
        held = self.suite.heldout_domain
        return {"kl": mean_token_kl(self.target, model, held, self.vocab),
                "nll": heldout_nll(model, held, self.vocab)}

    def alpha_grid(self, alphas=(0.2, 0.5, 0.8, 1.0), taus=(2.0,)) -> list[dict]:
        rows = []
        for tau in taus:
            for alpha in alphas:
                row = {"alpha": alpha, "tau": tau, **self.heldout_metrics(self.distilled(alpha, tau))}
                self._say(f"alpha={alpha} tau={tau}: nll {row['nll']:.4f} kl {row['kl']:.4f}")
                rows.append(row)
        return rows

    def bench_prompts(self) -> list[list[int]]:
        return encode_prompts(self.suite.bench, self.vocab)

    def drafts(self) -> dict[str, TinyTransformer]:
        return {"draft-sft": self.draft, "draft-distilled": self.distilled()}

    def bench(self, grid: dict) -> BenchReport:
        """Run a benchmark grid (``BenchConfig`` fields except ``prompts``) on the bench prompt set."""
        config = BenchConfig(self.bench_prompts(), **_bench_fields(grid))
        drafts = {name: m for name, m in self.drafts().items() if name in config.drafts}
        return run_bench(self.target, drafts, config, progress=self.progress)


def _bench_fields(grid: dict) -> dict:
    allowed = {f.name for f in fields(BenchConfig)} - {"prompts"}
    out = {}
    for k, v in grid.items():
        if k not in allowed:
            raise InvalidArgument(f"bench.{k}: unknown field")
        out[k] = tuple(v) if isinstance(v, list) else v
    return out


PRESETS = ("table2-desk", "table3-desk", "table4-desk", "table5-desk", "table6-desk")


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise InvalidArgument(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("spdlab.presets").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return json.loads(text)


def run_preset(preset: dict, progress: Callable[[str], None] | None = None, log_sink=None) -> dict:
    """Run one preset; returns a JSON-ready result (bench presets also carry the report object)."""
    cfg = LabConfig.from_dict(preset.get("lab"))
    kind = preset["experiment"]
    if kind == "curriculum":
        rows = curriculum_arms(cfg, tuple(preset.get("seeds", (0, 1, 2))), progress)
        return {"experiment": kind, "rows": rows}
    lab = Lab(cfg, progress, log_sink)
    if kind == "alpha_grid":
        rows = lab.alpha_grid(tuple(preset.get("alphas", (0.2, 0.5, 0.8, 1.0))), tuple(preset.get("taus", (2.0,))))
        return {"experiment": kind, "rows": rows}
    if kind == "bench":
        report = lab.bench(preset["bench"])
        return {"experiment": kind, "report": report}
    raise InvalidArgument(f"experiment: unknown kind {kind!r}")
