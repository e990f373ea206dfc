"""Throughput grid: autoregressive baseline, model-drafted and prompt-lookup speculation."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import platform
import statistics
import sysconfig
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .. import __version__, _kernels
from ..decoding import (DecodePolicy, DecodeTrace, SpecDecodeConfig, autoregressive_decode, prompt_lookup_decode,
                        speculative_decode)
from ..decoding.policy import MODES, RULES
from ..errors import InvalidArgument
from ..metrics import acceptance_stats
from .analytic import analytic_speedup, expected_tokens_per_block

METHODS = ("autoregressive", "speculative", "prompt_lookup")

TIMING_NOTE = "tokens/s counts emitted tokens over the decode loop only; prompt processing is excluded"

# published large-scale reference points, kept as annotations only
REFERENCE_POINTS = {
    "acceptance_rate_distilled": 0.7578,
    "speedup_top_p_n3": 1.39,
    "speedup_greedy_n3": 1.52,
    "speedup_prompt_lookup_n3": 1.12,
    "speedup_top_p_n5": 1.36,
}


@dataclass(frozen=True)
class BenchCell:
    method: str
    mode: str = "greedy"
    draft: str | None = None
    block_size: int = 0
    acceptance: str = "standard_ratio"

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidArgument(f"method must be one of {METHODS}, got {self.method!r}")
        if self.mode not in MODES:
            raise InvalidArgument(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.acceptance not in RULES:
            raise InvalidArgument(f"acceptance must be one of {RULES}, got {self.acceptance!r}")
        if self.method == "speculative" and not self.draft:
            raise InvalidArgument("speculative cells need a draft name")
        if self.method != "autoregressive" and self.block_size < 1:
            raise InvalidArgument("block_size must be at least 1 for speculative cells")

    @property
    def label(self) -> str:
        if self.method == "autoregressive":
            return f"autoregressive/{self.mode}"
        who = self.draft if self.method == "speculative" else "lookup"
        return f"{self.method}/{who}/n={self.block_size}/{self.mode}/{self.acceptance}"


@dataclass
class BenchConfig:
    """Grid, prompts and timing protocol.

    ``prompts`` are token-id lists. The grid is every combination of
    ``drafts`` x ``block_sizes`` x ``modes`` x ``rules`` for model drafts,
    ``block_sizes`` x ``modes`` for prompt lookup when enabled, plus one
    autoregressive baseline per mode. Rules only vary under top-p.
    """

    prompts: list[list[int]]
    drafts: tuple[str, ...] = ()
    block_sizes: tuple[int, ...] = (3,)
    modes: tuple[str, ...] = ("greedy",)
    rules: tuple[str, ...] = ("standard_ratio",)
    prompt_lookup: bool = False
    lookup_order: int = 3
    lookup_min_order: int = 1
    repetitions: int = 3
    warmup: int = 1
    max_tokens: int = 32
    top_p: float = 0.7
    temperature: float = 1.0
    seed: int = 0
    variance_threshold: float = 0.25
    min_flop_ratio: float = 0.0

    def __post_init__(self):
        if self.repetitions < 3:
            raise InvalidArgument("repetitions must be at least 3")
        if self.warmup < 1:
            raise InvalidArgument("warmup must be at least 1")
        if not self.prompts or any(len(p) == 0 for p in self.prompts):
            raise InvalidArgument("prompts must be a non-empty list of non-empty token lists")
        for m in self.modes:
            if m not in MODES:
                raise InvalidArgument(f"modes: unknown mode {m!r}")
        for r in self.rules:
            if r not in RULES:
                raise InvalidArgument(f"rules: unknown acceptance rule {r!r}")

    def cells(self) -> list[BenchCell]:
        out = []
        for mode in self.modes:
            out.append(BenchCell("autoregressive", mode))
            rules = self.rules if mode == "top_p" else self.rules[:1]
            for draft in self.drafts:
                for n in self.block_sizes:
                    for rule in rules:
                        out.append(BenchCell("speculative", mode, draft, n, rule))
            if self.prompt_lookup:
                for n in self.block_sizes:
                    for rule in rules:
                        out.append(BenchCell("prompt_lookup", mode, None, n, rule))
        return out

    def policy(self, mode: str, index: int) -> DecodePolicy:
        return DecodePolicy(mode, self.top_p, self.temperature, self.max_tokens, self.seed + index)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["prompts"] = [list(map(int, p)) for p in self.prompts]
        return d


@dataclass
class CellResult:
    cell: BenchCell
    tokens_per_s: float
    rep_tokens_per_s: list[float]
    stats: dict
    tokens_emitted: int
    outputs_digest: str
    speedup: float = 1.0
    expected_tokens_per_call: float | None = None
    tokens_per_call_deviation: float | None = None
    predicted_speedup: float | None = None
    flop_ratio: float | None = None
    variance_flag: bool = False
    deterministic: bool = True

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "label": self.cell.label,
            **asdict(self.cell),
            "stats": self.stats,
            "tokens_emitted": self.tokens_emitted,
            "outputs_digest": self.outputs_digest,
            "expected_tokens_per_call": self.expected_tokens_per_call,
            "tokens_per_call_deviation": self.tokens_per_call_deviation,
            "flop_ratio": self.flop_ratio,
            "deterministic": self.deterministic,
        }
        if include_timing:
            d.update(tokens_per_s=self.tokens_per_s, rep_tokens_per_s=self.rep_tokens_per_s, speedup=self.speedup,
                     predicted_speedup=self.predicted_speedup, variance_flag=self.variance_flag)
        return d


@dataclass
class BenchReport:
    cells: list[CellResult]
    config: dict
    environment: dict
    notes: list[str] = field(default_factory=list)

    def cell(self, label: str) -> CellResult:
        for c in self.cells:
            if c.cell.label == label:
                return c
        raise KeyError(label)

    def find(self, **match) -> list[CellResult]:
        return [c for c in self.cells if all(getattr(c.cell, k) == v for k, v in match.items())]

    @property
    def flagged(self) -> bool:
        return any(c.variance_flag for c in self.cells)

    def to_dict(self, include_timing: bool = True) -> dict:
        return {
            "timing": TIMING_NOTE,
            "config": self.config,
            "environment": self.environment if include_timing else {"kernel_backend": self.environment.get(
                "kernel_backend")},
            "cells": [c.to_dict(include_timing) for c in self.cells],
            # variance notes come from wall-clock spread, so they count as timing
            "notes": self.notes if include_timing else [n for n in self.notes if n == TIMING_NOTE],
            "reference_points": REFERENCE_POINTS,
        }


def flops_per_token(model) -> float | None:
    cfg = getattr(model, "config", None)
    return cfg.flops_per_token() if cfg is not None and hasattr(cfg, "flops_per_token") else None


def validate_cost_ratio(target, drafts: Mapping[str, object], min_ratio: float) -> dict[str, float]:
    """Target/draft FLOP ratios; raises when any named draft is cheaper than required."""
    tf = flops_per_token(target)
    ratios = {}
    for name, d in drafts.items():
        df = flops_per_token(d)
        if tf is None or df is None:
            if min_ratio > 0:
                raise InvalidArgument(f"cannot compute a FLOP ratio for draft {name!r}")
            continue
        ratios[name] = tf / df
        if ratios[name] < min_ratio:
            raise InvalidArgument(
                f"drafts.{name}: target/draft FLOP ratio {ratios[name]:.1f} is below the required {min_ratio}"
            )
    return ratios


def environment_fingerprint() -> dict:
    try:
        blas = np.show_config(mode="dicts").get("Build Dependencies", {}).get("blas", {})
        blas = f"{blas.get('name', '?')} {blas.get('version', '')}".strip()
    except Exception:  # older numpy without dict mode
        blas = "unknown"
    return {
        "package_version": __version__,
        "python": platform.python_version(),
        "implementation": platform.python_implementation(),
        "numpy": np.__version__,
        "blas": blas,
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "cpu_count": os.cpu_count(),
        "kernel_backend": _kernels.BACKEND,
        "cflags": sysconfig.get_config_var("CFLAGS") or "",
    }


def _decode(cell: BenchCell, target, drafts, prompt, policy, config: "BenchConfig"):
    if cell.method == "autoregressive":
        return autoregressive_decode(target, prompt, policy)
    spec = SpecDecodeConfig(block_size=cell.block_size, acceptance=cell.acceptance)
    if cell.method == "speculative":
        return speculative_decode(target, drafts[cell.draft], prompt, spec, policy)
    return prompt_lookup_decode(target, prompt, spec, policy, config.lookup_order, config.lookup_min_order)


def _run_cell(cell, target, drafts, config: BenchConfig) -> tuple[float, list[DecodeTrace], str]:
    traces = []
    digest = hashlib.sha256()
    for i, prompt in enumerate(config.prompts):
        out, trace = _decode(cell, target, drafts, prompt, config.policy(cell.mode, i), config)
        traces.append(trace)
        digest.update(json.dumps(out).encode())
    elapsed = sum(t.duration_s for t in traces)
    tokens = sum(t.tokens_emitted for t in traces)
    return tokens / elapsed if elapsed > 0 else float("inf"), traces, digest.hexdigest()


def _trace_key(traces: Sequence[DecodeTrace]) -> list:
    return [(t.records()[:-1], t.draft_calls, t.target_calls, t.tokens_emitted) for t in traces]


def run_bench(target, drafts: Mapping[str, object], config: BenchConfig, progress=None) -> BenchReport:
    """Time every grid cell, one decode session at a time.

    Warmup passes run first and are discarded. Repetitions then cycle through
    all cells in turn so slow drift in machine speed hits every cell alike.
    The reported rate is the median over repetitions; a cell whose
    repetition spread exceeds ``variance_threshold`` of the median is flagged.
    """
    cells = config.cells()
    missing = {c.draft for c in cells if c.method == "speculative"} - set(drafts)
    if missing:
        raise InvalidArgument(f"drafts: no model supplied for {sorted(missing)}")
    ratios = validate_cost_ratio(target, {k: drafts[k] for k in config.drafts}, config.min_flop_ratio)

    for _ in range(config.warmup):
        for cell in cells:
            _run_cell(cell, target, drafts, config)

    rates: dict[BenchCell, list[float]] = {c: [] for c in cells}
    first: dict[BenchCell, tuple[list[DecodeTrace], str]] = {}
    deterministic = {c: True for c in cells}
    for rep in range(config.repetitions):
        for cell in cells:
            rate, traces, digest = _run_cell(cell, target, drafts, config)
            rates[cell].append(rate)
            if rep == 0:
                first[cell] = (traces, digest)
            elif digest != first[cell][1] or _trace_key(traces) != _trace_key(first[cell][0]):
                deterministic[cell] = False
            if progress is not None:
                progress(f"rep {rep + 1}/{config.repetitions} {cell.label}: {rate:.1f} tok/s")

    results = []
    for cell in cells:
        traces, digest = first[cell]
        stats = acceptance_stats(traces)
        med = statistics.median(rates[cell])
        spread = (max(rates[cell]) - min(rates[cell])) / med if med > 0 else 0.0
        res = CellResult(cell, med, rates[cell], stats, stats["tokens_emitted"], digest,
                         variance_flag=spread > config.variance_threshold, deterministic=deterministic[cell])
        if cell.method != "autoregressive" and stats["proposed"]:
            res.expected_tokens_per_call = expected_tokens_per_block(stats["beta_mle"], cell.block_size)
            res.tokens_per_call_deviation = (
                stats["tokens_per_target_call"] - res.expected_tokens_per_call) / res.expected_tokens_per_call
        if cell.method == "speculative" and cell.draft in ratios:
            res.flop_ratio = ratios[cell.draft]
            res.predicted_speedup = analytic_speedup(stats["beta_mle"], cell.block_size, 1.0 / res.flop_ratio)
        results.append(res)
    for res in results:
        base = next(r for r in results if r.cell.method == "autoregressive" and r.cell.mode == res.cell.mode)
        res.speedup = res.tokens_per_s / base.tokens_per_s
    notes = [TIMING_NOTE]
    if any(r.variance_flag for r in results):
        notes.append(f"timing spread above {config.variance_threshold:.0%} of the median in at least one cell")
    return BenchReport(results, config.to_dict(), environment_fingerprint(), notes)


COLUMNS = ("Method", "Draft", "n", "Mode", "Rule", "Accept %", "Tok/call", "Expect", "Tokens/s", "Speedup", "Flag")


def _row(c: CellResult) -> list[str]:
    spd = c.cell.method != "autoregressive"
    return [
        c.cell.method,
        c.cell.draft or ("lookup" if c.cell.method == "prompt_lookup" else "-"),
        str(c.cell.block_size) if spd else "-",
        c.cell.mode,
        c.cell.acceptance if spd and c.cell.mode == "top_p" else ("greedy" if spd else "-"),
        f"{100 * c.stats['acceptance_rate']:.2f}" if spd else "-",
        f"{c.stats['tokens_per_target_call']:.3f}",
        f"{c.expected_tokens_per_call:.3f}" if c.expected_tokens_per_call is not None else "-",
        f"{c.tokens_per_s:.1f}",
        f"{c.speedup:.2f}x",
        "variance" if c.variance_flag else "",
    ]


def format_table(report: BenchReport) -> str:
    rows = [list(COLUMNS)] + [_row(c) for c in report.cells]
    widths = [max(len(r[i]) for r in rows) for i in range(len(COLUMNS))]
    lines = [f"# {TIMING_NOTE}", f"# kernel backend: {report.environment.get('kernel_backend')}"]
    for j, r in enumerate(rows):
        lines.append("  ".join(v.rjust(w) if i >= 5 else v.ljust(w) for i, (v, w) in enumerate(zip(r, widths))))
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    lines.extend(f"# note: {n}" for n in report.notes[1:])
    return "\n".join(lines) + "\n"


def emit_report(report: BenchReport, out_dir, formats: Sequence[str] = ("json", "txt", "csv"),
                stem: str = "bench") -> list[Path]:
    """Write the report as JSON, an aligned text table and/or a CSV grid; returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for fmt in formats:
        path = out_dir / f"{stem}.{fmt}"
        if fmt == "json":
            path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        elif fmt == "txt":
            path.write_text(format_table(report), encoding="utf-8")
        elif fmt == "csv":
            with open(path, "w", newline="", encoding="utf-8") as f:
                w = csv.writer(f)
                w.writerow(COLUMNS)
                w.writerows(_row(c) for c in report.cells)
        else:
            raise InvalidArgument(f"unknown report format {fmt!r}")
        paths.append(path)
    return paths
