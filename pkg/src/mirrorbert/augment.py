"""Input-space augmentations applied to one side of a mirror pair.

Token-level operators (span and word masking) act on token ids after
tokenization; character-level operators act on raw text and need a tokenizer
to map the result back to ids.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .corpus import MASK, MASK_ID, MirrorPair


class AugmentKind(str, Enum):
    NONE = "none"
    SPAN_MASK = "span_mask"
    WORD_MASK = "word_mask"
    CHAR_ERASE = "char_erase"
    PUNCT_INSERT = "punct_insert"
    RAND_CHAR_INSERT = "rand_char_insert"


CHARACTER_LEVEL = {AugmentKind.CHAR_ERASE, AugmentKind.PUNCT_INSERT, AugmentKind.RAND_CHAR_INSERT}


@dataclass(frozen=True)
class AugmentSpec:
    """``param`` is k for SPAN_MASK, n for WORD_MASK and a percentage for CHAR_ERASE."""

    kind: AugmentKind = AugmentKind.NONE
    param: float = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", AugmentKind(self.kind))
        if self.param < 0:
            raise ValueError("augmentation parameter must be >= 0")
        if self.kind is AugmentKind.CHAR_ERASE and self.param > 100:
            raise ValueError("char erase percentage must lie in [0, 100]")

    def to_dict(self):
        return {"kind": self.kind.value, "param": self.param, "seed": self.seed}


def span_mask(tokens: Sequence[int], k: int, rng) -> list[int]:
    """Replace a random contiguous window of ``min(k, len - 1)`` non-CLS tokens by MASK."""
    out = list(tokens)
    width = min(int(k), len(out) - 1)
    if width <= 0:
        return out
    start = int(rng.integers(1, len(out) - width + 1))
    out[start:start + width] = [MASK_ID] * width
    return out


def token_word_mask(tokens: Sequence[int], n: int, rng) -> list[int]:
    out = list(tokens)
    n = min(int(n), len(out) - 1)
    if n <= 0:
        return out
    for pos in rng.choice(np.arange(1, len(out)), size=n, replace=False):
        out[int(pos)] = MASK_ID
    return out


def surface_augment(text: str, spec: AugmentSpec, rng) -> str:
    if not text:
        raise ValueError("text must be non-empty")
    kind = spec.kind
    if kind in (AugmentKind.NONE, AugmentKind.SPAN_MASK):
        return text
    if kind is AugmentKind.WORD_MASK:
        words = text.split()
        n = min(int(spec.param), len(words))
        for i in rng.choice(len(words), size=n, replace=False):
            words[int(i)] = MASK
        return " ".join(words)
    if kind is AugmentKind.CHAR_ERASE:
        keep = rng.random(len(text)) >= spec.param / 100.0
        out = "".join(c for c, kept in zip(text, keep) if kept)
        if not out.strip():
            visible = [i for i, c in enumerate(text) if not c.isspace()] or list(range(len(text)))
            out = text[visible[int(rng.integers(len(visible)))]]
        return out
    if kind is AugmentKind.PUNCT_INSERT:
        words = text.split()
        if len(words) < 2:
            return text
        b = int(rng.integers(len(words) - 1))
        words[b] = words[b] + ","
        return " ".join(words)
    if kind is AugmentKind.RAND_CHAR_INSERT:
        pos = int(rng.integers(len(text) + 1))
        ch = string.ascii_lowercase[int(rng.integers(26))]
        return text[:pos] + ch + text[pos:]
    raise ValueError(f"unknown augmentation {kind}")


def augment_tokens(tokens: Sequence[int], spec: AugmentSpec, rng) -> list[int]:
    if spec.kind is AugmentKind.SPAN_MASK:
        return span_mask(tokens, int(spec.param), rng)
    if spec.kind is AugmentKind.WORD_MASK:
        return token_word_mask(tokens, int(spec.param), rng)
    if spec.kind is AugmentKind.NONE:
        return list(tokens)
    raise ValueError(f"{spec.kind.value} operates on text, not token ids")


def apply_to_pair(pair: MirrorPair, spec: AugmentSpec, rng,
                  text: str | None = None,
                  tokenizer: Callable[[str], list[int]] | None = None) -> MirrorPair:
    """Augment exactly one side, picked by a fair coin, and keep the label.

    Character-level kinds need the pair's source ``text`` and a ``tokenizer``.
    """
    if spec.kind is AugmentKind.NONE:
        return pair
    left = bool(rng.random() < 0.5)
    side = pair.left_tokens if left else pair.right_tokens
    if spec.kind in CHARACTER_LEVEL:
        if text is None or tokenizer is None:
            raise ValueError(f"{spec.kind.value} needs the source text and a tokenizer")
        new = tuple(tokenizer(surface_augment(text, spec, rng)))
    else:
        new = tuple(augment_tokens(side, spec, rng))
    if left:
        return replace(pair, left_tokens=new)
    return replace(pair, right_tokens=new)
