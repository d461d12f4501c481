"""Corpus ingestion, vocabulary, tokenization and self-duplicated datasets."""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DataError

PAD, MASK, CLS, UNK = "[PAD]", "[MASK]", "[CLS]", "[UNK]"
SPECIAL_TOKENS = (PAD, MASK, CLS, UNK)
PAD_ID, MASK_ID, CLS_ID, UNK_ID = 0, 1, 2, 3

RANDOM_ALPHABET = string.ascii_lowercase + string.digits


@dataclass(frozen=True)
class CorpusItem:
    id: int
    text: str
    frequency_rank: int | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise DataError(f"corpus item {self.id} has empty text")


@dataclass(frozen=True)
class MirrorPair:
    left_tokens: tuple[int, ...]
    right_tokens: tuple[int, ...]
    label: int


@dataclass
class Vocabulary:
    """Token table whose first four slots are PAD, MASK, CLS and UNK."""

    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != SPECIAL_TOKENS:
            raise DataError("vocabulary must start with the special tokens")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise DataError("vocabulary contains duplicate tokens")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    pad_id = PAD_ID
    mask_id = MASK_ID
    cls_id = CLS_ID
    unk_id = UNK_ID

    def to_list(self) -> list[str]:
        return list(self.tokens)

    @classmethod
    def from_list(cls, tokens: Sequence[str]) -> "Vocabulary":
        return cls(list(tokens))


def _split(text: str, lowercase: bool) -> list[str]:
    if lowercase:
        text = text.lower()
    return text.split()


def build_vocabulary(corpus: Sequence[CorpusItem], max_size: int,
                     lowercase: bool = True) -> Vocabulary:
    """Specials plus the ``max_size - 4`` most frequent whitespace tokens.

    Ties in frequency are broken lexicographically.
    """
    if max_size < 5:
        raise ValueError("max_size must be >= 5")
    if not corpus:
        raise DataError("empty corpus")
    counts = Counter()
    for item in corpus:
        counts.update(t for t in _split(item.text, lowercase) if t not in SPECIAL_TOKENS)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    words = [w for w, _ in ranked[: max_size - len(SPECIAL_TOKENS)]]
    return Vocabulary(list(SPECIAL_TOKENS) + words)


def tokenize(text: str, vocab: Vocabulary, max_len: int,
             lowercase: bool = True) -> list[int]:
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    # special tokens written literally (e.g. "[MASK]" from word masking) keep their ids
    ids = [CLS_ID]
    for tok in text.split():
        if tok in SPECIAL_TOKENS:
            ids.append(vocab.index[tok])
        else:
            ids.append(vocab.id_of(tok.lower() if lowercase else tok))
    return ids[:max_len]


def make_mirror_dataset(items: Sequence[CorpusItem], vocab: Vocabulary, max_len: int,
                        lowercase: bool = True) -> list[MirrorPair]:
    if not items:
        raise DataError("empty corpus")
    seen = set()
    for item in items:
        if item.text in seen:
            raise DataError("corpus contains duplicates")
        seen.add(item.text)
    pairs = []
    for label, item in enumerate(items):
        toks = tuple(tokenize(item.text, vocab, max_len, lowercase))
        pairs.append(MirrorPair(toks, toks, label))
    return pairs


def sample_frequency_bucket(ranked_words: Sequence[CorpusItem], bucket_index: int,
                            bucket_size: int) -> list[CorpusItem]:
    if bucket_size < 1 or bucket_index < 0:
        raise ValueError("bucket_index must be >= 0 and bucket_size >= 1")
    stop = (bucket_index + 1) * bucket_size
    if stop > len(ranked_words):
        raise ValueError(
            f"bucket {bucket_index} of size {bucket_size} exceeds {len(ranked_words)} words")
    return list(ranked_words[bucket_index * bucket_size: stop])


def generate_random_strings(n: int, length_min: int, length_max: int,
                            seed: int) -> list[CorpusItem]:
    """Distinct strings over ``[a-z0-9]`` with uniformly drawn lengths."""
    if n < 1 or not 1 <= length_min <= length_max:
        raise ValueError("need n >= 1 and 1 <= length_min <= length_max")
    rng = np.random.default_rng(seed)
    alphabet = np.array(list(RANDOM_ALPHABET))
    out: list[str] = []
    seen: set[str] = set()
    for _ in range(100 * n):
        length = int(rng.integers(length_min, length_max + 1))
        s = "".join(alphabet[rng.integers(0, len(alphabet), size=length)])
        if s not in seen:
            seen.add(s)
            out.append(s)
            if len(out) == n:
                return [CorpusItem(i, s) for i, s in enumerate(out)]
    raise DataError("alphabet too small")


# -- file formats ------------------------------------------------------------

def _read_lines(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read().splitlines()
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid UTF-8 ({exc.reason} at byte {exc.start})") from None


def read_corpus(path: str | Path) -> list[CorpusItem]:
    """One item per line; blank lines are skipped."""
    items = []
    for line in _read_lines(path):
        text = line.strip()
        if text:
            items.append(CorpusItem(len(items), text))
    return items


def read_ranked_words(path: str | Path) -> list[CorpusItem]:
    """One word per line; the line number is the frequency rank."""
    items = []
    for rank, line in enumerate(_read_lines(path), start=1):
        word = line.strip()
        if not word:
            raise DataError(f"{path}:{rank}: empty line in ranked word list")
        items.append(CorpusItem(rank - 1, word, frequency_rank=rank))
    return items


def write_lines(path: str | Path, texts: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in texts:
            fh.write(t + "\n")

