"""Checkpoint files.

Binary layout, all integers little-endian::

    magic      8 bytes   b"SPDLCKPT"
    version    u32       1
    header_len u32
    header     UTF-8 JSON {"config", "vocab", "provenance", "tensors": [[name, shape], ...]}
    payload    float64 little-endian tensors, concatenated in header order

A sidecar ``<path>.json`` repeats the header with parameter counts for humans.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..numerics.tensor import Tensor
from .transformer import TinyTransformer, TransformerConfig
from .vocab import Vocab

MAGIC = b"SPDLCKPT"
VERSION = 1


def save(model: TinyTransformer, path, vocab: Vocab | None = None, provenance: dict | None = None) -> Path:
    path = Path(path)
    names = list(model.params)
    header = {
        "config": model.config.to_dict(),
        "vocab": list(vocab.chars) if vocab is not None else None,
        "provenance": provenance or {},
        "tensors": [[n, list(model.params[n].shape)] for n in names],
    }
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(model.params[n].data, dtype="<f8").tobytes())
    meta = dict(header, n_params=model.n_params(), format_version=VERSION)
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True, ensure_ascii=False) + "\n")
    return path


def load(path) -> tuple[TinyTransformer, Vocab | None, dict]:
    """Return ``(model, vocab, provenance)``."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: unreadable header ({e})") from None
    offset = 16 + hlen
    params = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        if offset + 8 * count > len(raw):
            raise DataError(f"{path}: truncated at tensor {name!r}")
        data = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
        offset += 8 * count
        params[name] = Tensor(data, requires_grad=True, name=name)
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes")
    config = TransformerConfig(**header["config"])
    vocab = Vocab(tuple(header["vocab"])) if header.get("vocab") is not None else None
    return TinyTransformer(config, params), vocab, header.get("provenance", {})
