"""Per-block decode records.

Each JSON line written by :meth:`DecodeTrace.write_jsonl` is either a block
record (``"type": "block"``) with fields ``index``, ``proposed``,
``accepted``, ``token``, ``kind``, ``rule``, or a single trailing summary
record (``"type": "summary"``) with ``method``, ``tokens_emitted``,
``draft_calls``, ``target_calls``, ``proposed``, ``accepted``,
``acceptance_rate``, ``blocks``, ``duration_s``. These names are stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

# kind of the target-sourced token closing a block
CORRECTION, BONUS, TARGET, NONE = "correction", "bonus", "target", "none"


@dataclass
class BlockRecord:
    proposed: list[int]
    accepted: int
    token: int | None
    kind: str
    rule: str = ""

    @property
    def emitted(self) -> int:
        return self.accepted + (0 if self.token is None else 1)

    def truncate(self, keep: int) -> None:
        """Keep only the first ``keep`` tokens this block emitted."""
        if keep >= self.emitted:
            return
        if keep <= self.accepted:
            self.accepted = keep
            self.token = None
            self.kind = NONE


@dataclass
class DecodeTrace:
    method: str
    blocks: list[BlockRecord] = field(default_factory=list)
    draft_calls: int = 0
    target_calls: int = 0
    tokens_emitted: int = 0
    duration_s: float = 0.0

    @property
    def proposed(self) -> int:
        return sum(len(b.proposed) for b in self.blocks)

    @property
    def accepted(self) -> int:
        return sum(b.accepted for b in self.blocks)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0

    def conserved(self) -> bool:
        return self.tokens_emitted == sum(b.accepted + (b.token is not None) for b in self.blocks)

    def summary(self) -> dict:
        return {
            "type": "summary",
            "method": self.method,
            "tokens_emitted": self.tokens_emitted,
            "draft_calls": self.draft_calls,
            "target_calls": self.target_calls,
            "proposed": self.proposed,
            "accepted": self.accepted,
            "acceptance_rate": self.acceptance_rate,
            "blocks": len(self.blocks),
            "duration_s": self.duration_s,
        }

    def records(self) -> list[dict]:
        out = [
            {"type": "block", "index": i, "proposed": b.proposed, "accepted": b.accepted,
             "token": b.token, "kind": b.kind, "rule": b.rule}
            for i, b in enumerate(self.blocks)
        ]
        out.append(self.summary())
        return out

    def write_jsonl(self, path, include_timing: bool = True) -> None:
        with open(Path(path), "w", encoding="utf-8") as f:
            for rec in self.records():
                if not include_timing:
                    rec.pop("duration_s", None)
                f.write(json.dumps(rec, sort_keys=True) + "\n")
