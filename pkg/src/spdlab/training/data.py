"""Datasets, file formats and the seeded synthetic grammars.

Dataset files are UTF-8 JSON lines with fields ``id``, ``prompt``,
``response`` and ``stage`` (``stage1-weak`` or ``stage2-domain``). Corpora
are plain UTF-8 text, one document per line.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import DataError
from ..models.vocab import BOS, EOS, Vocab

STAGES = ("stage1-weak", "stage2-domain")


@dataclass(frozen=True)
class SftPair:
    prompt: str
    response: str
    stage: str
    id: str = ""

    def encode(self, vocab: Vocab) -> tuple[list[int], list[bool]]:
        """Token ids ``BOS prompt response EOS`` and a per-token "is response" flag (EOS included)."""
        p, r = vocab.encode(self.prompt), vocab.encode(self.response)
        ids = [BOS] + p + r + [EOS]
        flags = [False] * (1 + len(p)) + [True] * (len(r) + 1)
        return ids, flags


def read_corpus(path) -> list[str]:
    lines = [ln.rstrip("\n") for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    return [ln for ln in lines if ln]


def write_corpus(path, docs: Iterable[str]) -> None:
    Path(path).write_text("".join(d + "\n" for d in docs), encoding="utf-8")


def read_pairs(path) -> list[SftPair]:
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            out.append(SftPair(rec["prompt"], rec["response"], rec.get("stage", ""), str(rec.get("id", f"{n}"))))
        except (json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"{path}:{n}: bad dataset record ({exc})") from exc
    return out


def write_pairs(path, pairs: Iterable[SftPair]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in pairs:
            f.write(json.dumps(asdict(p), ensure_ascii=False, sort_keys=True) + "\n")


def dataset_checksum(pairs: Iterable[SftPair]) -> str:
    """Order-independent digest of a multiset of records."""
    lines = sorted(json.dumps(asdict(p), sort_keys=True, ensure_ascii=False) for p in pairs)
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


# --- synthetic two-domain world ------------------------------------------------

COMPANIES = ("norco", "bayan", "tiros", "kelvo", "mardu", "sunex", "pavra", "lomic",
             "hexar", "quent", "rivox", "delta", "omnis", "zabro", "fenik", "gorim")
SECTORS = ("steel", "power", "grid", "rail", "port", "coal", "water", "bank")
CITIES = ("harbin", "xian", "dalian", "wuhan", "jinan", "hefei", "lanzhou", "taiyuan")
OWNERS = ("state", "city", "provincial", "central")
METRICS = ("profit", "assets", "output", "debt", "revenue")
YEARS = tuple(str(y) for y in range(2018, 2025))
DIRECTIONS = ("rose", "fell")

GENERAL_WORDS = {
    "apple": "fruit", "pear": "fruit", "hammer": "tool", "saw": "tool", "tiger": "animal",
    "horse": "animal", "violin": "instrument", "drum": "instrument", "oak": "tree", "pine": "tree",
    "bus": "vehicle", "boat": "vehicle", "wool": "fabric", "silk": "fabric",
}
FINANCE_TERMS = {
    "equity": "a share of ownership", "debt": "money that is owed", "dividend": "profit paid to owners",
    "audit": "a check of the books", "budget": "a plan for spending", "asset": "a thing of value",
}
NAMES = ("lin", "wei", "ana", "omar", "sara", "ivan", "mei", "tom")


@dataclass(frozen=True)
class World:
    """Fixed facts about the synthetic companies, drawn once from a seed."""

    sector: dict
    city: dict
    owner: dict

    @classmethod
    def make(cls, seed: int = 7) -> "World":
        rng = np.random.default_rng(seed)
        pick = lambda opts: {c: opts[int(rng.integers(len(opts)))] for c in COMPANIES}  # noqa: E731
        return cls(pick(SECTORS), pick(CITIES), pick(OWNERS))


def _choice(rng, options):
    return options[int(rng.integers(len(options)))]


def _change(rng) -> tuple[str, str]:
    return _choice(rng, DIRECTIONS), f"{int(rng.integers(10, 100))}"


def domain_documents(world: World, rng: np.random.Generator, count: int) -> list[str]:
    """Raw domain text for continual pre-training; states every company fact."""
    docs = []
    for i in range(count):
        co = COMPANIES[i % len(COMPANIES)]
        kind = int(rng.integers(4))
        if kind == 0:
            docs.append(f"{co} is a {world.sector[co]} group. {co} is based in {world.city[co]}.")
        elif kind == 1:
            d, n = _change(rng)
            m, y = _choice(rng, METRICS), _choice(rng, YEARS)
            docs.append(f"{co} is a {world.sector[co]} group. {m} {d} {n} pct in {y}.")
        elif kind == 2:
            docs.append(f"{co} is owned by the {world.owner[co]} board. {co} is based in {world.city[co]}.")
        else:
            other = _choice(rng, COMPANIES)
            docs.append(f"{co} is a {world.sector[co]} group. {other} is a {world.sector[other]} group.")
    return docs


def stage1_pairs(rng: np.random.Generator, count: int) -> list[SftPair]:
    """Weakly related dialog: general definitions, greetings and finance vocabulary."""
    words, terms = list(GENERAL_WORDS), list(FINANCE_TERMS)
    out = []
    for i in range(count):
        kind = int(rng.integers(3))
        if kind == 0:
            w = _choice(rng, words)
            out.append(SftPair(f"q: what is a {w}? a:", f" a {w} is a kind of {GENERAL_WORDS[w]}.", STAGES[0]))
        elif kind == 1:
            name = _choice(rng, NAMES)
            out.append(SftPair(f"q: greet {name}. a:", f" hello {name}, nice to meet you.", STAGES[0]))
        else:
            t = _choice(rng, terms)
            out.append(SftPair(f"q: what is {t}? a:", f" {t} is {FINANCE_TERMS[t]}.", STAGES[0]))
    return [SftPair(p.prompt, p.response, p.stage, f"s1-{i:05d}") for i, p in enumerate(out)]


DOMAIN_KINDS = 5


def domain_pair(world: World, rng: np.random.Generator, co: str, kind: int) -> SftPair:
    """Kinds: 0 sector, 1 city, 2 owner (facts), 3 yearly change (random), 4 grounded restatement of a note."""
    if kind == 0:
        return SftPair(f"q: sector of {co}? a:", f" {co} is a {world.sector[co]} group.", STAGES[1])
    if kind == 1:
        return SftPair(f"q: where is {co}? a:", f" {co} is based in {world.city[co]}.", STAGES[1])
    if kind == 2:
        return SftPair(f"q: who owns {co}? a:", f" {co} is owned by the {world.owner[co]} board.", STAGES[1])
    m, y = _choice(rng, METRICS), _choice(rng, YEARS)
    d, n = _change(rng)
    if kind == 3:
        return SftPair(f"q: {co} {m} in {y}? a:", f" {m} {d} {n} pct in {y}.", STAGES[1])
    # grounded: the answer restates a note given in the prompt
    return SftPair(f"note: {m} {d} {n} pct in {y}. q: {co} {m}? a:", f" {co} {m} {d} {n} pct in {y}.", STAGES[1])


def stage2_pairs(world: World, rng: np.random.Generator, count: int, holdout: float = 0.3) -> list[SftPair]:
    """Expert domain QA. A seeded ``holdout`` share of (company, question) facts never appears here."""
    seen = [(co, k) for co in COMPANIES for k in range(DOMAIN_KINDS) if not _held_out(co, k, holdout)]
    out = []
    for i in range(count):
        co, k = seen[int(rng.integers(len(seen)))]
        p = domain_pair(world, rng, co, k)
        out.append(SftPair(p.prompt, p.response, p.stage, f"s2-{i:05d}"))
    return out


FACT_KINDS = 3


def domain_eval_pairs(world: World, rng: np.random.Generator, count: int, kinds: int = FACT_KINDS,
                      prefix: str = "ev") -> list[SftPair]:
    """Domain QA drawn from the first ``kinds`` question kinds, over every company.

    With the default (fact questions only) this includes the (company,
    question) facts held out of stage 2, which only continual pre-training
    can supply.
    """
    out = []
    for i in range(count):
        co, k = _choice(rng, COMPANIES), int(rng.integers(kinds))
        p = domain_pair(world, rng, co, k)
        out.append(SftPair(p.prompt, p.response, p.stage, f"{prefix}-{i:05d}"))
    return out


def _held_out(co: str, kind: int, share: float) -> bool:
    h = int(hashlib.sha256(f"{co}/{kind}".encode()).hexdigest()[:8], 16)
    return (h % 1000) / 1000.0 < share


@dataclass
class SyntheticSuite:
    cpt_corpus: list[str]
    stage1: list[SftPair]
    stage2: list[SftPair]
    eval_domain: list[SftPair]
    heldout_domain: list[SftPair]
    bench: list[SftPair]


def make_suite(seed: int = 0, cpt_docs: int = 1200, n_stage1: int = 600, n_stage2: int = 600,
               n_eval: int = 48, n_heldout: int = 64, n_bench: int = 32, world_seed: int = 7) -> SyntheticSuite:
    world = World.make(world_seed)
    rng = np.random.default_rng(seed)
    return SyntheticSuite(
        cpt_corpus=domain_documents(world, rng, cpt_docs),
        stage1=stage1_pairs(rng, n_stage1),
        stage2=stage2_pairs(world, rng, n_stage2),
        eval_domain=domain_eval_pairs(world, rng, n_eval),
        heldout_domain=[replace(p, id=p.id.replace("s2-", "ho-")) for p in stage2_pairs(world, rng, n_heldout)],
        bench=domain_eval_pairs(world, rng, n_bench, DOMAIN_KINDS, prefix="bench"),
    )


def suite_vocab_text(suite: SyntheticSuite) -> str:
    parts: list[str] = list(suite.cpt_corpus)
    for pairs in (suite.stage1, suite.stage2, suite.eval_domain, suite.heldout_domain, suite.bench):
        parts.extend(p.prompt + p.response for p in pairs)
    return "".join(parts)


def encode_documents(docs: Sequence[str], vocab: Vocab) -> list[list[int]]:
    return [[BOS] + vocab.encode(d) + [EOS] for d in docs]
