"""Synthetic concept-cluster data for desk-scale experiments.

Each concept owns a handful of key words. A surface variant of a concept is a
random subset of its key words plus shared filler words, in random order, so two
variants of the same concept overlap only partially.
A pretraining corpus built from random key-word subsets gives a toy MLM the
co-occurrence knowledge that mirror tuning can then expose.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import RANDOM_ALPHABET, CorpusItem, write_lines
from .evaluation import RetrievalDictionary, write_tsv


@dataclass
class ClusterTask:
    concepts: list[list[str]]
    variants: list[list[str]]
    fillers: list[str]
    pretrain_texts: list[str]

    def dictionary(self, query_variant: int = -1) -> RetrievalDictionary:
        """Held-out retrieval: one variant per concept queries the remaining variants."""
        n_var = len(self.variants[0])
        q = query_variant % n_var
        entries = [(v, f"C{c}") for c, vs in enumerate(self.variants)
                   for j, v in enumerate(vs) if j != q]
        queries = [(vs[q], f"C{c}") for c, vs in enumerate(self.variants)]
        return RetrievalDictionary(entries, queries)

    def tuning_items(self, query_variant: int = -1) -> list[CorpusItem]:
        """Unlabelled tuning strings: pretraining texts plus dictionary surfaces, deduplicated."""
        seen, items = set(), []
        for text in self.pretrain_texts + self.dictionary(query_variant).surfaces:
            if text not in seen:
                seen.add(text)
                items.append(CorpusItem(len(items), text))
        return items

    def words(self) -> list[str]:
        return [w for keys in self.concepts for w in keys]

    def random_pairs(self, n: int, seed: int) -> list[tuple[str, str]]:
        """Pairs of variants drawn from two different concepts."""
        rng = np.random.default_rng(seed)
        out = []
        while len(out) < n:
            a, b = rng.choice(len(self.variants), size=2, replace=False)
            out.append((self.variants[a][rng.integers(len(self.variants[a]))],
                        self.variants[b][rng.integers(len(self.variants[b]))]))
        return out

    def positive_pairs(self) -> list[tuple[str, str]]:
        return [(vs[0], vs[1]) for vs in self.variants]

    def similarity_rows(self, n: int, seed: int) -> list[tuple[str, str, float]]:
        """Variant pairs scored by the Jaccard overlap of their key words."""
        keys = {w for ck in self.concepts for w in ck}
        rows = []
        for a, b in self.positive_pairs()[: n // 2] + self.random_pairs(n - n // 2, seed):
            ka, kb = set(a.split()) & keys, set(b.split()) & keys
            rows.append((a, b, len(ka & kb) / len(ka | kb)))
        return rows

    def write_files(self, directory: str | Path, seed: int = 0) -> dict[str, Path]:
        """Write the corpus, pretraining texts and evaluation files used by the CLI."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {name: d / fname for name, fname in (
            ("corpus", "corpus.txt"), ("pretrain", "pretrain.txt"),
            ("dictionary", "dictionary.tsv"), ("queries", "queries.tsv"),
            ("similarity", "similarity.tsv"), ("binary", "pairs.tsv"))}
        dictionary = self.dictionary()
        write_lines(paths["corpus"], [it.text for it in self.tuning_items()])
        write_lines(paths["pretrain"], self.pretrain_texts)
        write_tsv(paths["dictionary"], dictionary.entries)
        write_tsv(paths["queries"], dictionary.queries)
        n = min(len(self.variants), 100)
        write_tsv(paths["similarity"], self.similarity_rows(n, seed))
        pos = self.positive_pairs()[:n]
        write_tsv(paths["binary"], [(a, b, 1) for a, b in pos]
                  + [(a, b, 0) for a, b in self.random_pairs(n, seed)])
        return paths


def _words(rng, n, length=5, taken=()):
    alphabet = np.array(list(RANDOM_ALPHABET[:26]))
    out, seen = [], set(taken)
    while len(out) < n:
        w = "".join(rng.choice(alphabet, size=length))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def make_cluster_task(n_concepts: int = 200, n_variants: int = 3, keys_per_concept: int = 6,
                      keys_per_variant: int = 3, fillers_per_variant: int = 1,
                      n_fillers: int = 20, pretrain_per_concept: int = 10,
                      seed: int = 0) -> ClusterTask:
    if not 1 <= keys_per_variant <= keys_per_concept:
        raise ValueError("keys_per_variant must lie in [1, keys_per_concept]")
    rng = np.random.default_rng(seed)
    keys = _words(rng, n_concepts * keys_per_concept)
    fillers = _words(rng, n_fillers, taken=keys)
    concepts = [keys[i * keys_per_concept:(i + 1) * keys_per_concept] for i in range(n_concepts)]
    variants = []
    for ck in concepts:
        vs: list[str] = []
        while len(vs) < n_variants:
            words = list(rng.choice(ck, size=keys_per_variant, replace=False))
            words += [fillers[i] for i in rng.integers(n_fillers, size=fillers_per_variant)]
            text = " ".join(rng.permutation(words))
            if text not in vs:
                vs.append(text)
        variants.append(vs)
    pretrain = []
    for ck in concepts:
        for _ in range(pretrain_per_concept):
            n_keys = int(rng.integers(2, keys_per_concept + 1))
            words = list(rng.choice(ck, size=n_keys, replace=False))
            words += [fillers[i] for i in rng.integers(n_fillers, size=rng.integers(0, 3))]
            pretrain.append(" ".join(rng.permutation(words)))
    return ClusterTask(concepts, variants, fillers, pretrain)
