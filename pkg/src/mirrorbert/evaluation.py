"""Similarity, retrieval and classification metrics plus their dataset formats."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .exceptions import DataError

Encoder = Callable[[Sequence[str]], np.ndarray]


class Scorer(str, Enum):
    COSINE = "cosine"
    CSLS = "csls"


@dataclass
class SimilarityDataset:
    rows: list[tuple[str, str, float]]

    def __post_init__(self):
        if len(self.rows) < 2:
            raise DataError("a similarity dataset needs at least 2 rows")
        if len({r[2] for r in self.rows}) < 2:
            raise DataError("gold scores are all identical")


@dataclass
class RetrievalDictionary:
    entries: list[tuple[str, str]]
    queries: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        if not self.entries:
            raise DataError("empty dictionary")
        concepts = {c for _, c in self.entries}
        for i, (mention, gold) in enumerate(self.queries):
            if gold not in concepts:
                raise DataError(f"query {i} ({mention!r}): gold concept {gold!r} not in dictionary")

    @property
    def surfaces(self):
        return [s for s, _ in self.entries]

    @property
    def concepts(self):
        return [c for _, c in self.entries]


@dataclass
class EvalReport:
    metrics: dict[str, float]
    n_items: int
    fingerprint: str = ""

    def to_dict(self):
        return {"metrics": self.metrics, "n_items": self.n_items, "fingerprint": self.fingerprint}


def fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


# -- correlations and AUC ------------------------------------------------------------

def _paired(xs, ys):
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("need two equal-length sequences of at least 2 values")
    return x, y


def pearson(xs, ys) -> float:
    x, y = _paired(xs, ys)
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(np.dot(dx, dx)), math.sqrt(np.dot(dy, dy))
    if sx == 0 or sy == 0:
        raise DataError("constant input")
    return float(np.clip(np.dot(dx, dy) / (sx * sy), -1.0, 1.0))


def spearman(xs, ys) -> float:
    """Pearson correlation of average ranks."""
    x, y = _paired(xs, ys)
    return pearson(rankdata(x), rankdata(y))


def roc_auc(scores, labels) -> float:
    """Mann-Whitney form of the ROC AUC; tied scores count one half."""
    s = np.asarray(scores, dtype=float)
    lab = np.asarray(labels)
    if s.shape != lab.shape:
        raise ValueError("scores and labels differ in length")
    if not np.isin(lab, (0, 1)).all():
        raise DataError("labels must be 0 or 1")
    n1 = int((lab == 1).sum())
    n0 = len(lab) - n1
    if n1 == 0 or n0 == 0:
        raise DataError("roc_auc needs both classes")
    ranks = rankdata(s)
    return float((ranks[lab == 1].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


# -- cosine / CSLS retrieval -------------------------------------------------------------

def normalize_rows(m: np.ndarray) -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if (norms == 0).any():
        raise DataError("zero-norm vector")
    return m / norms


def cosine(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DataError("zero-norm vector")
    return float(np.dot(a, b) / (na * nb))


def neighbourhood_means(xs: np.ndarray, pool: np.ndarray, K: int) -> np.ndarray:
    """Mean cosine of each row of ``xs`` to its K nearest pool members.

    Pool members that equal the row exactly are skipped.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    pool = np.atleast_2d(np.asarray(pool, dtype=float))
    sims = normalize_rows(xs) @ normalize_rows(pool).T
    out = np.empty(len(xs))
    for i, x in enumerate(xs):
        row = sims[i]
        self_hits = np.all(pool == x, axis=1)
        if self_hits.any():
            row = row[~self_hits]
        kk = min(K, len(row))
        if kk == 0:
            raise DataError("empty CSLS neighbourhood")
        out[i] = np.sort(row)[-kk:].mean()
    return out


def csls_score(x, y, x_pool, y_pool, K: int = 10) -> float:
    """2 cos(x, y) - r(x; y_pool, K) - r(y; x_pool, K)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > len(x_pool) or K > len(y_pool):
        raise ValueError("K exceeds a pool size")
    rx = neighbourhood_means(np.asarray(x)[None], y_pool, K)[0]
    ry = neighbourhood_means(np.asarray(y)[None], x_pool, K)[0]
    return 2.0 * cosine(x, y) - rx - ry


def score_matrix(queries: np.ndarray, dictionary: np.ndarray, scorer: Scorer | str = Scorer.COSINE,
                 csls_k: int = 10) -> np.ndarray:
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    d = np.atleast_2d(np.asarray(dictionary, dtype=float))
    sims = normalize_rows(q) @ normalize_rows(d).T
    if Scorer(scorer) is Scorer.CSLS:
        rq = neighbourhood_means(q, d, csls_k)
        rd = neighbourhood_means(d, q, csls_k)
        sims = 2.0 * sims - rq[:, None] - rd[None, :]
    return sims


def rank_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Top-k indices by descending score, ties by ascending index."""
    order = np.lexsort((np.arange(len(scores)), -scores))
    return order[:k]


def retrieve_topk(query, dictionary_embeddings, k: int, scorer: Scorer | str = Scorer.COSINE,
                  query_pool=None, csls_k: int = 10) -> list[int]:
    """Indices of the k best dictionary entries for ``query``.

    CSLS needs ``query_pool``, the set of query-side vectors used for the
    dictionary entries' neighbourhood term; it defaults to the query alone.
    """
    d = np.atleast_2d(np.asarray(dictionary_embeddings, dtype=float))
    if d.size == 0 or len(d) == 0:
        raise DataError("empty dictionary")
    if not 1 <= k <= len(d):
        raise ValueError("k must lie in [1, dictionary size]")
    q = np.asarray(query, dtype=float)[None]
    if Scorer(scorer) is Scorer.CSLS:
        pool = q if query_pool is None else np.atleast_2d(query_pool)
        cos = (normalize_rows(q) @ normalize_rows(d).T)[0]
        scores = (2.0 * cos - neighbourhood_means(q, d, csls_k)[0]
                  - neighbourhood_means(d, pool, csls_k))
    else:
        scores = score_matrix(q, d)[0]
    return [int(i) for i in rank_indices(scores, k)]


def accuracy_from_embeddings(query_emb, gold: Sequence[str], dict_emb, dict_concepts: Sequence[str],
                             k: int, scorer: Scorer | str = Scorer.COSINE,
                             csls_k: int = 10) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    concepts = np.asarray(dict_concepts, dtype=object)
    known = set(dict_concepts)
    for i, g in enumerate(gold):
        if g not in known:
            raise DataError(f"query {i}: gold concept {g!r} not in dictionary")
    scores = score_matrix(query_emb, dict_emb, scorer, csls_k)
    k = min(k, scores.shape[1])
    hits = 0
    for i, g in enumerate(gold):
        top = rank_indices(scores[i], k)
        hits += g in set(concepts[top])
    return hits / len(gold)


def accuracy_at_k(dictionary: RetrievalDictionary, encode: Encoder, k: int,
                  scorer: Scorer | str = Scorer.COSINE, csls_k: int = 10) -> float:
    """Fraction of queries whose gold concept is among the top-k retrieved surfaces."""
    if not dictionary.queries:
        raise DataError("no queries")
    q = encode([m for m, _ in dictionary.queries])
    d = encode(dictionary.surfaces)
    return accuracy_from_embeddings(q, [g for _, g in dictionary.queries], d,
                                    dictionary.concepts, k, scorer, csls_k)


def pair_cosines(encode: Encoder, pairs: Sequence[tuple[str, str]]) -> np.ndarray:
    a = encode([p[0] for p in pairs])
    b = encode([p[1] for p in pairs])
    return np.sum(normalize_rows(a) * normalize_rows(b), axis=1)


def eval_similarity(encode: Encoder, dataset: SimilarityDataset) -> EvalReport:
    """Spearman and Pearson of embedding cosines against gold scores."""
    try:
        cos = pair_cosines(encode, [(a, b) for a, b, _ in dataset.rows])
    except DataError as exc:
        for i, (a, b, _) in enumerate(dataset.rows):
            try:
                encode([a, b])
            except DataError as row_exc:
                raise DataError(f"row {i}: {row_exc}") from exc
        raise
    gold = [g for _, _, g in dataset.rows]
    return EvalReport({"spearman": spearman(cos, gold), "pearson": pearson(cos, gold)},
                      len(dataset.rows))


def eval_auc(encode: Encoder, rows: Sequence[tuple[str, str, int]]) -> EvalReport:
    cos = pair_cosines(encode, [(a, b) for a, b, _ in rows])
    return EvalReport({"roc_auc": roc_auc(cos, [y for _, _, y in rows])}, len(rows))


def eval_retrieval(encode: Encoder, dictionary: RetrievalDictionary,
                   ks: Sequence[int] = (1, 5), scorer: Scorer | str = Scorer.COSINE,
                   csls_k: int = 10) -> EvalReport:
    q = encode([m for m, _ in dictionary.queries])
    d = encode(dictionary.surfaces)
    gold = [g for _, g in dictionary.queries]
    metrics = {f"acc@{k}": accuracy_from_embeddings(q, gold, d, dictionary.concepts, k,
                                                    scorer, csls_k) for k in ks}
    return EvalReport(metrics, len(gold))


# -- file formats ---------------------------------------------------------------------

def _read_tsv(path, ncols):
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != ncols:
                raise DataError(f"{path}:{lineno}: expected {ncols} tab-separated fields")
            rows.append((lineno, parts))
    return rows


def read_similarity_tsv(path: str | Path) -> SimilarityDataset:
    out = []
    for lineno, (a, b, s) in _read_tsv(path, 3):
        try:
            out.append((a, b, float(s)))
        except ValueError:
            raise DataError(f"{path}:{lineno}: score {s!r} is not a number") from None
    return SimilarityDataset(out)


def read_binary_tsv(path: str | Path) -> list[tuple[str, str, int]]:
    out = []
    for lineno, (a, b, y) in _read_tsv(path, 3):
        if y.strip() not in ("0", "1"):
            raise DataError(f"{path}:{lineno}: label must be 0 or 1")
        out.append((a, b, int(y)))
    return out


def read_dictionary(dictionary_path: str | Path,
                    queries_path: str | Path | None = None) -> RetrievalDictionary:
    entries = [(s, c) for _, (s, c) in _read_tsv(dictionary_path, 2)]
    queries = [(m, c) for _, (m, c) in _read_tsv(queries_path, 2)] if queries_path else []
    return RetrievalDictionary(entries, queries)


def write_tsv(path: str | Path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for r in rows:
            cells = [str(c) for c in r]
            if any("\t" in c or "\n" in c for c in cells):
                raise DataError(f"cell in row {r!r} contains a tab or newline")
            fh.write("\t".join(cells) + "\n")
