"""``spdlab`` command line: one subcommand per pipeline phase.

Every subcommand accepts ``--config FILE`` (a JSON object whose keys are the
subcommand's option names) and per-option flags; a flag beats the file, the
file beats the built-in default. The resolved configuration is echoed to
stderr and written as ``config.json`` inside a fresh run directory named
``<timestamp>-<subcommand>-<config hash>`` under ``--out-root``; every output
of the run goes there.

Exit codes: 0 success, 1 other failure, 2 invalid argument or config,
3 bad or missing data, 4 internal error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
import traceback
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from . import __version__
from .errors import DataError, InvalidArgument, SpdlabError

PATH = "path"


@dataclass(frozen=True)
class Opt:
    name: str
    type: Any
    default: Any = None
    help: str = ""
    choices: tuple | None = None
    required: bool = False
    many: bool = False

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")

    def coerce(self, value, where: str):
        if value is None:
            return None
        if self.many:
            if not isinstance(value, (list, tuple)):
                value = [value]
            return [Opt(self.name, self.type, choices=self.choices).coerce(v, where) for v in value]
        try:
            if self.type is bool:
                if not isinstance(value, bool):
                    raise ValueError("expected true or false")
                out = value
            elif self.type is PATH:
                out = str(value)
            else:
                out = self.type(value)
        except (TypeError, ValueError) as exc:
            raise InvalidArgument(f"{where}{self.name}: {exc}") from exc
        if self.choices and out not in self.choices:
            raise InvalidArgument(f"{where}{self.name}: must be one of {', '.join(map(str, self.choices))}")
        return out


MODEL_OPTS = [
    Opt("d_model", int, 32, "model width"),
    Opt("n_layers", int, 1, "transformer blocks"),
    Opt("n_heads", int, 2, "attention heads"),
    Opt("d_ff", int, 64, "MLP hidden width"),
    Opt("max_context", int, 128, "positions"),
    Opt("init_seed", int, 1, "initialization seed"),
]

TRAIN_OPTS = [
    Opt("batch_size", int, 16, "rows per step"),
    Opt("epochs", int, 1, "passes over the data"),
    Opt("lr_max", float, 3e-3, "peak learning rate"),
    Opt("lr_min", float, 3e-4, "final learning rate"),
    Opt("warmup_ratio", float, 0.05, "share of steps spent warming up"),
    Opt("schedule", str, "cosine", "decay after warmup", ("cosine", "constant")),
    Opt("pack_to", int, 96, "packed row width"),
    Opt("seed", int, 0, "shuffle seed"),
    Opt("grad_clip", float, 1.0, "global gradient-norm clip (0 disables)"),
]

PACK_CHOICES = ("first_fit", "fill", "single")

SFT_OPTS = [
    Opt("loss_mask", str, "response_only", "which tokens carry loss", ("response_only", "all_tokens")),
    Opt("pack_mode", str, "first_fit", "packing strategy", PACK_CHOICES),
]

DISTILL_OPTS = [
    SFT_OPTS[0],
    Opt("pack_mode", str, "single", "packing strategy (single keeps the teacher's context exact)", PACK_CHOICES),
]

POLICY_OPTS = [
    Opt("mode", str, "greedy", "decoding mode", ("greedy", "top_p")),
    Opt("top_p", float, 0.7, "nucleus mass"),
    Opt("temperature", float, 1.0, "softmax temperature"),
    Opt("max_tokens", int, 60, "new tokens per prompt (capped to fit the context)"),
    Opt("seed", int, 0, "sampling seed (prompt i uses seed + i)"),
]

SPEC_OPTS = [
    Opt("block_size", int, 3, "draft tokens per block"),
    Opt("acceptance", str, "standard_ratio", "verification rule", ("standard_ratio", "paper_exact_match")),
    Opt("bonus", bool, True, "emit a target token after a fully accepted block"),
    Opt("lookup_order", int, 3, "longest n-gram tried by prompt lookup"),
    Opt("lookup_min_order", int, 1, "shortest n-gram accepted by prompt lookup"),
]


def _train_config(cfg: dict, **extra):
    from .training import TrainConfig

    keys = ("batch_size", "epochs", "lr_max", "lr_min", "warmup_ratio", "schedule", "pack_to", "seed", "grad_clip",
            "loss_mask", "pack_mode")
    return TrainConfig(**{k: cfg[k] for k in keys if k in cfg}, **extra)


class Run:
    """Run directory, progress output and structured metrics log for one invocation."""

    def __init__(self, command: str, cfg: dict, out_root: str, quiet: bool):
        from .lab import config_hash

        self.command, self.cfg, self.quiet = command, cfg, quiet
        stamp = _dt.datetime.now().strftime("%Y%m%dT%H%M%S")
        base = Path(out_root) / f"{stamp}-{command}-{config_hash({'command': command, **cfg})}"
        path, n = base, 1
        while path.exists():
            path = Path(f"{base}-{n}")
            n += 1
        path.mkdir(parents=True)
        self.dir = path
        self._sink = None
        echo = json.dumps({"command": command, "version": __version__, "config": cfg}, indent=2, sort_keys=True)
        (path / "config.json").write_text(echo + "\n", encoding="utf-8")
        self.say(f"run directory: {path}")
        if not quiet:
            print(echo, file=sys.stderr)

    def say(self, msg: str) -> None:
        if not self.quiet:
            print(f"[spdlab {self.command}] {msg}", file=sys.stderr, flush=True)

    @property
    def sink(self):
        from .training.loops import JsonlSink

        if self._sink is None:
            self._sink = JsonlSink(self.dir / "metrics.jsonl")
        return self._sink

    def write_json(self, name: str, obj) -> Path:
        p = self.dir / name
        p.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
        return p

    def close(self) -> None:
        if self._sink is not None:
            self._sink.close()


# --- helpers -----------------------------------------------------------------


def _load_model(path: str, field: str):
    from .models import load

    return load(_existing(path, field))


def _existing(path: str | None, field: str) -> str:
    if path is None:
        raise InvalidArgument(f"{field}: required")
    if not Path(path).exists():
        raise InvalidArgument(f"{field}: file not found: {path}")
    return path


def _load_vocab(path: str):
    from .models import Vocab

    raw = json.loads(Path(_existing(path, "vocab")).read_text(encoding="utf-8"))
    if not isinstance(raw, dict) or not isinstance(raw.get("chars"), list):
        raise DataError(f"{path}: not a vocabulary file")
    return Vocab(tuple(raw["chars"]))


def _vocab_for(cfg: dict, *checkpoint_vocabs):
    for v in checkpoint_vocabs:
        if v is not None:
            return v
    if cfg.get("vocab"):
        return _load_vocab(cfg["vocab"])
    raise InvalidArgument("vocab: required (the checkpoint carries no vocabulary)")


def _pairs(path: str, field: str):
    from .training import read_pairs

    pairs = read_pairs(_existing(path, field))
    if not pairs:
        raise DataError(f"{path}: dataset is empty")
    return pairs


def _prompts(path: str, field: str) -> list[tuple[str, str, str]]:
    """``(id, prompt, reference)`` from a JSONL dataset or a text file with one prompt per line."""
    path = _existing(path, field)
    if path.endswith(".jsonl"):
        return [(p.id, p.prompt, p.response) for p in _pairs(path, field)]
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln]
    return [(f"{i}", ln, "") for i, ln in enumerate(lines)]


def _policy(cfg: dict):
    from .decoding import DecodePolicy

    return DecodePolicy(cfg["mode"], cfg["top_p"], cfg["temperature"], cfg["max_tokens"], cfg["seed"])


def _spec(cfg: dict):
    from .decoding import SpecDecodeConfig

    return SpecDecodeConfig(cfg["block_size"], cfg["acceptance"], cfg["bonus"])


def _provenance(run: Run, **extra) -> dict:
    return {"command": run.command, "config": run.cfg, **extra}


def _save(run: Run, model, vocab, name: str = "model.ckpt", **extra) -> Path:
    from .models import save

    path = save(model, run.dir / name, vocab, _provenance(run, **extra))
    run.say(f"wrote {path}")
    return path


# --- subcommands -------------------------------------------------------------


def cmd_gen_data(cfg: dict, run: Run) -> None:
    from .lab import SuiteConfig, build_suite
    from .training import write_corpus, write_pairs

    suite, vocab = build_suite(SuiteConfig(**{k: cfg[k] for k in SuiteConfig.__dataclass_fields__}))
    write_corpus(run.dir / "cpt_corpus.txt", suite.cpt_corpus)
    for name in ("stage1", "stage2", "eval_domain", "heldout_domain", "bench"):
        write_pairs(run.dir / f"{name}.jsonl", getattr(suite, name))
    run.write_json("vocab.json", {"chars": list(vocab.chars)})
    run.say(f"wrote synthetic suite ({vocab.size} symbols)")


def cmd_build_vocab(cfg: dict, run: Run) -> None:
    from .models import build_vocab
    from .training import read_corpus

    text = []
    for path in cfg["corpus"]:
        _existing(path, "corpus")
        if path.endswith(".jsonl"):
            text.extend(p.prompt + p.response for p in _pairs(path, "corpus"))
        else:
            text.extend(read_corpus(path))
    vocab = build_vocab(text)
    run.write_json("vocab.json", {"chars": list(vocab.chars)})
    run.say(f"vocabulary of {vocab.size} symbols")


def _init_model(cfg: dict, vocab):
    from .models import TransformerConfig, init_transformer

    if cfg.get("init"):
        model, v, _ = _load_model(cfg["init"], "init")
        if v is not None and v != vocab:
            raise InvalidArgument("init: checkpoint vocabulary differs from --vocab")
        return model
    return init_transformer(TransformerConfig(vocab.size, cfg["d_model"], cfg["n_layers"], cfg["n_heads"],
                                              cfg["d_ff"], cfg["max_context"], cfg["init_seed"]))


def cmd_pretrain(cfg: dict, run: Run) -> None:
    from .training import pretrain, read_corpus

    init_vocab = _load_model(cfg["init"], "init")[1] if cfg.get("init") else None
    vocab = _vocab_for(cfg, init_vocab)
    model = _init_model(cfg, vocab)
    corpus = read_corpus(_existing(cfg["corpus"], "corpus"))
    if not corpus:
        raise DataError(f"{cfg['corpus']}: corpus is empty")
    res = pretrain(model, corpus, vocab, _train_config(cfg), run.sink)
    run.say(f"{len(res.log)} steps, final loss {res.losses[-1]:.4f}")
    _save(run, model, vocab)


def cmd_sft(cfg: dict, run: Run) -> None:
    from .training import sft

    model, v, _ = _load_model(cfg["init"], "init")
    vocab = _vocab_for(cfg, v)
    res = sft(model, _pairs(cfg["data"], "data"), vocab, _train_config(cfg), run.sink)
    run.say(f"{len(res.log)} steps, final loss {res.losses[-1]:.4f}")
    _save(run, model, vocab)


def cmd_curriculum(cfg: dict, run: Run) -> None:
    from .training import CurriculumSpec, Stage, run_curriculum

    model, v, _ = _load_model(cfg["init"], "init")
    vocab = _vocab_for(cfg, v)
    s1 = Stage("stage1", tuple(_pairs(cfg["stage1"], "stage1")), _train_config(cfg, epochs=cfg["stage1_epochs"]))
    s2_train = _train_config(cfg, epochs=cfg["stage2_epochs"], batch_size=cfg["stage2_batch_size"])
    s2 = Stage("stage2", tuple(_pairs(cfg["stage2"], "stage2")), s2_train)
    res = run_curriculum(model, CurriculumSpec((s1, s2), cfg["curriculum"], s2_train), vocab, log_sink=run.sink)
    run.write_json("snapshots.json", {"snapshots": res.snapshots, "checksum": res.checksum})
    _save(run, model, vocab, dataset_checksum=res.checksum)


def cmd_export_logits(cfg: dict, run: Run) -> None:
    from .training import export_teacher_logits

    teacher, v, _ = _load_model(cfg["teacher"], "teacher")
    vocab = _vocab_for(cfg, v)
    top_k = cfg["top_k"] or None
    store = export_teacher_logits(teacher, _pairs(cfg["data"], "data"), vocab, top_k, cfg["loss_mask"])
    store.save(run.dir / "teacher_logits.bin")
    run.say(f"stored {len(store.entries)} records (top_k={store.top_k})")


def cmd_distill(cfg: dict, run: Run) -> None:
    from .training import DistillConfig, TeacherLogitStore, distill

    student, v, _ = _load_model(cfg["student"], "student")
    vocab = _vocab_for(cfg, v)
    store = TeacherLogitStore.load(_existing(cfg["store"], "store"))
    dc = DistillConfig(cfg["alpha"], cfg["tau"], _train_config(cfg), cfg["tau_squared"])
    res = distill(student, store, _pairs(cfg["data"], "data"), vocab, dc, run.sink)
    last = res.log[-1]
    run.say(f"{len(res.log)} steps, final kl {last['kl']:.4f} sft {last['sft']:.4f}")
    _save(run, student, vocab)


def _decoder(cfg: dict, target):
    from .decoding import autoregressive_decode, prompt_lookup_decode, speculative_decode

    method = cfg["method"]
    if method == "autoregressive":
        return lambda ids, pol: autoregressive_decode(target, ids, pol)
    if method == "prompt_lookup":
        return lambda ids, pol: prompt_lookup_decode(target, ids, _spec(cfg), pol, cfg["lookup_order"],
                                                     cfg["lookup_min_order"])
    draft, _, _ = _load_model(cfg["draft"], "draft")
    return lambda ids, pol: speculative_decode(target, draft, ids, _spec(cfg), pol)


def cmd_decode(cfg: dict, run: Run) -> None:
    from dataclasses import replace

    from .metrics import acceptance_stats, fit_policy
    from .models import BOS, EOS

    target, v, _ = _load_model(cfg["target"], "target")
    vocab = _vocab_for(cfg, v)
    decode = _decoder(cfg, target)
    base = _policy(cfg)
    traces = []
    with open(run.dir / "outputs.jsonl", "w", encoding="utf-8") as out, \
            open(run.dir / "traces.jsonl", "w", encoding="utf-8") as tr:
        for i, (rid, prompt, _) in enumerate(_prompts(cfg["prompts"], "prompts")):
            ids = [BOS] + vocab.encode(prompt)
            pol = fit_policy(replace(base, seed=base.seed + i), len(ids), target.max_context)
            toks, trace = decode(ids, pol)
            traces.append(trace)
            text = vocab.decode(toks[: toks.index(EOS)] if EOS in toks else toks)
            out.write(json.dumps({"id": rid, "prompt": prompt, "output": text, "tokens": toks},
                                 ensure_ascii=False, sort_keys=True) + "\n")
            for rec in trace.records():
                rec.pop("duration_s", None)
                tr.write(json.dumps({"id": rid, **rec}, sort_keys=True) + "\n")
    stats = acceptance_stats(traces)
    run.write_json("summary.json", {"stats": stats, "duration_s": sum(t.duration_s for t in traces)})
    run.say(f"decoded {len(traces)} prompts, {stats['tokens_emitted']} tokens")


def cmd_eval(cfg: dict, run: Run) -> None:
    from .metrics import eval_generation

    target, v, _ = _load_model(cfg["model"], "model")
    vocab = _vocab_for(cfg, v)
    cfg = dict(cfg, target=cfg["model"])
    decode = _decoder(cfg, target)
    decode.max_context = target.max_context
    pairs = [(p, r) for _, p, r in _prompts(cfg["data"], "data")]
    report = eval_generation(decode, pairs, _policy(cfg), vocab)
    run.write_json("scores.json", report.to_dict())
    run.say(f"rouge1 {report.rouge1.f1:.4f} rouge2 {report.rouge2.f1:.4f} rougeL {report.rougeL.f1:.4f} "
            f"bleu4 {report.bleu4:.4f}")


def _parse_drafts(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise InvalidArgument(f"drafts: expected NAME=CHECKPOINT, got {item!r}")
        out[name] = path
    return out


BENCH_GRID_KEYS = ("block_sizes", "modes", "rules", "prompt_lookup", "lookup_order", "lookup_min_order",
                   "repetitions", "warmup", "max_tokens", "top_p", "temperature", "seed", "variance_threshold",
                   "min_flop_ratio")


def cmd_bench(cfg: dict, run: Run) -> None:
    from .bench import BenchConfig, emit_report, format_table, run_bench
    from .lab import Lab, LabConfig, encode_prompts, load_preset
    from .models import BOS

    preset = load_preset(cfg["preset"]) if cfg.get("preset") else {}
    if preset and preset.get("experiment") != "bench":
        raise InvalidArgument(f"preset: {cfg['preset']} is not a benchmark preset")
    grid = dict(preset.get("bench", {}))
    for k in BENCH_GRID_KEYS:
        if cfg.get(k) is not None:
            grid[k] = cfg[k]
    drafts_paths = _parse_drafts(cfg["drafts"] or [])
    if drafts_paths:
        grid["drafts"] = list(drafts_paths)
    if cfg.get("target"):
        target, v, _ = _load_model(cfg["target"], "target")
        vocab = _vocab_for(cfg, v)
        drafts = {n: _load_model(p, f"drafts.{n}")[0] for n, p in drafts_paths.items()}
        if cfg.get("prompts"):
            prompts = [[BOS] + vocab.encode(p) for _, p, _ in _prompts(cfg["prompts"], "prompts")]
        else:
            from .lab import build_suite, SuiteConfig

            suite, _ = build_suite(SuiteConfig())
            prompts = encode_prompts(suite.bench, vocab)
        config = BenchConfig(prompts, **{k: tuple(v) if isinstance(v, list) else v for k, v in grid.items()})
        report = run_bench(target, drafts, config, progress=run.say)
    elif preset:
        lab = Lab(LabConfig.from_dict(preset.get("lab")), run.say, run.sink)
        report = lab.bench(grid)
        for name, model in lab.drafts().items():
            if name in grid.get("drafts", ()):
                _save(run, model, lab.vocab, f"{name}.ckpt")
        _save(run, lab.target, lab.vocab, "target.ckpt")
    else:
        raise InvalidArgument("target: required unless a preset supplies the models")
    emit_report(report, run.dir, cfg["formats"])
    if not run.quiet:
        print(format_table(report), file=sys.stderr)


def cmd_experiment(cfg: dict, run: Run) -> None:
    from .bench import emit_report, format_table
    from .lab import load_preset, run_preset

    preset = load_preset(cfg["preset"])
    result = run_preset(preset, run.say, run.sink)
    if "report" in result:
        report = result.pop("report")
        emit_report(report, run.dir)
        if not run.quiet:
            print(format_table(report), file=sys.stderr)
        return
    run.write_json("results.json", result)
    for row in result["rows"]:
        run.say(json.dumps(row, sort_keys=True))


# --- command table -----------------------------------------------------------

COMMON = [Opt("out_root", PATH, "runs", "directory under which run directories are created")]
VOCAB_OPT = Opt("vocab", PATH, None, "vocabulary JSON (when the checkpoint has none)")


@dataclass(frozen=True)
class Command:
    name: str
    func: Callable[[dict, Run], None]
    help: str
    opts: tuple


def _commands() -> list[Command]:
    suite_opts = [Opt("seed", int, 0, "suite seed"), Opt("world_seed", int, 7, "fact table seed"),
                  Opt("cpt_docs", int, 1200), Opt("n_stage1", int, 600), Opt("n_stage2", int, 600),
                  Opt("n_eval", int, 48), Opt("n_heldout", int, 64), Opt("n_bench", int, 32)]
    decode_opts = [Opt("target", PATH, None, "target checkpoint", required=True),
                   Opt("draft", PATH, None, "draft checkpoint (speculative method)"),
                   Opt("method", str, "autoregressive", "decoder",
                       ("autoregressive", "speculative", "prompt_lookup")),
                   Opt("prompts", PATH, None, "JSONL dataset or text file of prompts", required=True),
                   VOCAB_OPT, *POLICY_OPTS, *SPEC_OPTS]
    return [
        Command("gen-data", cmd_gen_data, "write the seeded synthetic corpora and datasets", tuple(suite_opts)),
        Command("build-vocab", cmd_build_vocab, "character vocabulary from corpora and datasets",
                (Opt("corpus", PATH, None, "text corpora or JSONL datasets", required=True, many=True),)),
        Command("pretrain", cmd_pretrain, "next-token training on a raw corpus",
                (Opt("corpus", PATH, None, "text corpus, one document per line", required=True), VOCAB_OPT,
                 Opt("init", PATH, None, "start from this checkpoint instead of a fresh model"),
                 *MODEL_OPTS, *TRAIN_OPTS)),
        Command("sft", cmd_sft, "masked fine-tuning on prompt/response pairs",
                (Opt("init", PATH, None, "starting checkpoint", required=True),
                 Opt("data", PATH, None, "JSONL dataset", required=True), VOCAB_OPT, *TRAIN_OPTS, *SFT_OPTS)),
        Command("curriculum", cmd_curriculum, "two-stage (or joint) fine-tuning",
                (Opt("init", PATH, None, "starting checkpoint", required=True),
                 Opt("stage1", PATH, None, "weakly related dialog dataset", required=True),
                 Opt("stage2", PATH, None, "domain dataset", required=True),
                 Opt("curriculum", str, "staged", "staged stages or one joint run", ("staged", "joint")),
                 Opt("stage1_epochs", int, 1), Opt("stage2_epochs", int, 3), Opt("stage2_batch_size", int, 8),
                 VOCAB_OPT, *TRAIN_OPTS, *SFT_OPTS)),
        Command("export-logits", cmd_export_logits, "store teacher log-probabilities offline",
                (Opt("teacher", PATH, None, "teacher checkpoint", required=True),
                 Opt("data", PATH, None, "JSONL dataset", required=True),
                 Opt("top_k", int, 0, "keep the top K entries plus a remainder (0 keeps all)"),
                 Opt("loss_mask", str, "response_only", "positions to store", ("response_only", "all_tokens")),
                 VOCAB_OPT)),
        Command("distill", cmd_distill, "mixed KL + SFT training of a draft from stored teacher logits",
                (Opt("student", PATH, None, "draft checkpoint", required=True),
                 Opt("store", PATH, None, "teacher logit store", required=True),
                 Opt("data", PATH, None, "JSONL dataset the store was exported from", required=True),
                 Opt("alpha", float, 0.5, "weight of the KL term"), Opt("tau", float, 2.0, "temperature"),
                 Opt("tau_squared", bool, False, "scale the KL term by tau^2"),
                 VOCAB_OPT, *TRAIN_OPTS, *DISTILL_OPTS)),
        Command("decode", cmd_decode, "generate for a prompt file", tuple(decode_opts)),
        Command("eval", cmd_eval, "Rouge and BLEU of generations against references",
                (Opt("model", PATH, None, "target checkpoint", required=True),
                 Opt("data", PATH, None, "JSONL dataset with references", required=True),
                 Opt("draft", PATH, None, "draft checkpoint (speculative method)"),
                 Opt("method", str, "autoregressive", "decoder", ("autoregressive", "speculative",
                                                                  "prompt_lookup")),
                 VOCAB_OPT, *POLICY_OPTS, *SPEC_OPTS)),
        Command("bench", cmd_bench, "throughput and speedup grid",
                (Opt("preset", str, None, "grid preset", ("table4-desk", "table5-desk", "table6-desk")),
                 Opt("target", PATH, None, "target checkpoint (omit to train models from the preset)"),
                 Opt("drafts", str, None, "NAME=CHECKPOINT", many=True),
                 Opt("prompts", PATH, None, "prompt file (default: the synthetic bench prompts)"), VOCAB_OPT,
                 Opt("block_sizes", int, None, many=True), Opt("modes", str, None, many=True),
                 Opt("rules", str, None, many=True), Opt("prompt_lookup", bool, None),
                 Opt("lookup_order", int, None), Opt("lookup_min_order", int, None),
                 Opt("repetitions", int, None), Opt("warmup", int, None), Opt("max_tokens", int, None),
                 Opt("top_p", float, None), Opt("temperature", float, None), Opt("seed", int, None),
                 Opt("variance_threshold", float, None), Opt("min_flop_ratio", float, None),
                 Opt("formats", str, ["json", "txt", "csv"], "report formats", ("json", "txt", "csv"), many=True))),
        Command("experiment", cmd_experiment, "run a desk-scale experiment preset end to end",
                (Opt("preset", str, None, "preset name", ("table2-desk", "table3-desk", "table4-desk",
                                                          "table5-desk", "table6-desk"), required=True),)),
    ]


def build_parser(commands: list[Command]) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spdlab", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"spdlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for c in commands:
        p = sub.add_parser(c.name, help=c.help, description=c.help)
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--quiet", action="store_true", help="no progress output")
        for o in (*c.opts, *COMMON):
            kw: dict = {"default": None, "help": f"{o.help} (default: {o.default})".strip()}
            if o.type is bool:
                kw["action"] = argparse.BooleanOptionalAction
            else:
                kw["type"] = str if o.type is PATH else o.type
                if o.choices:
                    kw["choices"] = o.choices
                if o.many:
                    kw["nargs"] = "+"
            p.add_argument(o.flag, dest=o.name, **kw)
    return parser


def resolve_config(opts, file_cfg: dict, ns: argparse.Namespace | dict) -> dict:
    """Defaults, then config-file values, then explicit flags."""
    by_name = {o.name: o for o in opts}
    cfg = {o.name: o.default for o in opts}
    if not isinstance(file_cfg, dict):
        raise InvalidArgument("config: file must hold a JSON object")
    for key, value in file_cfg.items():
        if key not in by_name:
            raise InvalidArgument(f"config.{key}: unknown option")
        cfg[key] = by_name[key].coerce(value, "config.")
    flags = vars(ns) if isinstance(ns, argparse.Namespace) else ns
    for o in opts:
        if flags.get(o.name) is not None:
            cfg[o.name] = flags[o.name]
    for o in opts:
        if o.required and cfg[o.name] is None:
            raise InvalidArgument(f"{o.name}: required (flag {o.flag} or config key {o.name!r})")
    return cfg


def main(argv: list[str] | None = None) -> int:
    commands = _commands()
    parser = build_parser(commands)
    args = parser.parse_args(argv)
    command = next(c for c in commands if c.name == args.command)
    run = None
    try:
        file_cfg = {}
        if args.config:
            try:
                file_cfg = json.loads(Path(_existing(args.config, "config")).read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise InvalidArgument(f"config: {args.config} is not valid JSON ({exc})") from exc
        cfg = resolve_config((*command.opts, *COMMON), file_cfg, args)
        out_root = cfg.pop("out_root")
        run = Run(command.name, cfg, out_root, args.quiet)
        command.func(cfg, run)
        run.say("done")
        return 0
    except SpdlabError as exc:
        print(f"spdlab {command.name}: error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, MemoryError) as exc:
        print(f"spdlab {command.name}: error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 4
    finally:
        if run is not None:
            run.close()


if __name__ == "__main__":
    sys.exit(main())
