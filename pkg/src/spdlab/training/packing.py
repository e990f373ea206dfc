from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import InvalidArgument
from ..models.vocab import PAD

PACK_MODES = ("fill", "first_fit", "single")


@dataclass
class PackedRows:
    """Fixed-width rows of token ids with next-token targets and loss mask.

    ``segments[r]`` lists ``(doc_index, row_offset, doc_offset, length)`` for
    every document piece placed in row ``r``.
    """

    ids: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    segments: list[list[tuple[int, int, int, int]]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)

    def take(self, rows: Sequence[int]) -> "PackedRows":
        rows = list(rows)
        return PackedRows(self.ids[rows], self.targets[rows], self.mask[rows], [self.segments[r] for r in rows])


def pack_sequences(
    sequences: Sequence[Sequence[int]],
    window: int,
    loss_flags: Sequence[Sequence[bool]] | None = None,
    mode: str = "fill",
) -> PackedRows:
    """Concatenate documents into rows of ``window`` tokens.

    Documents are expected to end with EOS, which separates them. ``mode``:

    * ``"fill"``: concatenate everything and cut into consecutive rows, so a
      document may continue on the next row.
    * ``"first_fit"``: keep documents whole, placing each in the first row
      with room (documents longer than ``window`` are truncated).
    * ``"single"``: one document per row, padded (truncated when longer).

    Position t of a row predicts token t+1; the mask is true only when both
    tokens belong to the same document and ``loss_flags`` marks t+1 (all
    tokens count when ``loss_flags`` is None). Padding is PAD and masked.
    Attention is not isolated between documents sharing a row.
    """
    if window < 2:
        raise InvalidArgument("window must be at least 2")
    if mode not in PACK_MODES:
        raise InvalidArgument(f"unknown packing mode {mode!r}")
    flags = loss_flags if loss_flags is not None else [[True] * len(s) for s in sequences]

    rows: list[list[tuple[int, int, int]]] = []  # (doc, doc_offset, length)
    fill: list[int] = []
    if mode == "fill":
        used = 0
        for d, seq in enumerate(sequences):
            off = 0
            while off < len(seq):
                if not rows or used == window:
                    rows.append([])
                    used = 0
                take = min(window - used, len(seq) - off)
                rows[-1].append((d, off, take))
                used += take
                off += take
    elif mode == "single":
        rows = [[(d, 0, min(len(seq), window))] for d, seq in enumerate(sequences)]
    else:
        for d, seq in enumerate(sequences):
            length = min(len(seq), window)
            for r, room in enumerate(fill):
                if window - room >= length:
                    rows[r].append((d, 0, length))
                    fill[r] += length
                    break
            else:
                rows.append([(d, 0, length)])
                fill.append(length)

    n = len(rows)
    ids = np.full((n, window), PAD, dtype=np.int64)
    targets = np.full((n, window), PAD, dtype=np.int64)
    mask = np.zeros((n, window), dtype=bool)
    segments = []
    for r, pieces in enumerate(rows):
        pos = 0
        segs = []
        for d, off, length in pieces:
            seq, fl = sequences[d], flags[d]
            ids[r, pos:pos + length] = seq[off:off + length]
            for j in range(length - 1):
                targets[r, pos + j] = seq[off + j + 1]
                mask[r, pos + j] = bool(fl[off + j + 1])
            segs.append((d, pos, off, length))
            pos += length
        segments.append(segs)
    return PackedRows(ids, targets, mask, segments)
