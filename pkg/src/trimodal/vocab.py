"""Closed word-level vocabulary with reserved control tokens."""

from __future__ import annotations

import re
from pathlib import Path
from typing import List

from .errors import ValidationError

RESERVED = ["[PAD]", "[CLS]", "[MASK]", "[BOS]", "[EOS]", "[UNK]"]
STRUCT_WORDS = ["a", "and", "."]
COLOR_WORDS = ["red", "green", "blue", "yellow", "orange", "purple", "cyan", "white"]
SHAPE_WORDS = ["circle", "square", "triangle", "cross"]

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


class Vocabulary:
    """token <-> dense id map; reserved ids occupy the first six slots."""

    def __init__(self, tokens: List[str]):
        if tokens[: len(RESERVED)] != RESERVED:
            raise ValidationError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ValidationError("vocabulary contains duplicate tokens")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def cls_id(self) -> int:
        return 1

    @property
    def mask_id(self) -> int:
        return 2

    @property
    def bos_id(self) -> int:
        return 3

    @property
    def eos_id(self) -> int:
        return 4

    @property
    def unk_id(self) -> int:
        return 5

    def id_for(self, token: str) -> int:
        return self.index.get(token, self.unk_id)

    def token_for(self, idx: int) -> str:
        return self.tokens[idx]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text().splitlines()
        return cls([ln for ln in lines if ln])

    @classmethod
    def default(cls) -> "Vocabulary":
        return cls(RESERVED + STRUCT_WORDS + COLOR_WORDS + SHAPE_WORDS)


def tokenize(text: str, vocab: Vocabulary) -> List[int]:
    """Lowercase, split on whitespace/punctuation, map OOV words to [UNK]."""
    if not text or not text.strip():
        raise ValidationError("cannot tokenize empty text")
    words = _TOKEN_RE.findall(text.lower())
    return [vocab.id_for(w) for w in words]


def detokenize(ids, vocab: Vocabulary) -> str:
    return " ".join(vocab.token_for(int(i)) for i in ids)


def normalize(text: str) -> str:
    """Canonical form a tokenize/detokenize round trip reproduces."""
    return " ".join(_TOKEN_RE.findall(text.lower()))
