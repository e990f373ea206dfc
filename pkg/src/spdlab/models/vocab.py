from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")
UNK_CHAR = "�"


@dataclass(frozen=True)
class Vocab:
    """Character vocabulary. Ids 0-3 are reserved specials, then codepoints in sorted order."""

    chars: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "_index", {c: i + len(SPECIALS) for i, c in enumerate(self.chars)})

    def __len__(self) -> int:
        return len(SPECIALS) + len(self.chars)

    @property
    def size(self) -> int:
        return len(self)

    def encode(self, text: str) -> list[int]:
        index = self._index
        return [index.get(c, UNK) for c in text]

    def decode(self, ids: Iterable[int]) -> str:
        out = []
        offset = len(SPECIALS)
        for i in ids:
            i = int(i)
            if i >= offset:
                out.append(self.chars[i - offset])
            elif i == UNK:
                out.append(UNK_CHAR)
        return "".join(out)

    def token(self, i: int) -> str:
        return SPECIALS[i] if i < len(SPECIALS) else self.chars[i - len(SPECIALS)]


def build_vocab(corpus: str | Sequence[str]) -> Vocab:
    if not isinstance(corpus, str):
        corpus = "".join(corpus)
    return Vocab(tuple(sorted(set(corpus) - {"\n"})))
