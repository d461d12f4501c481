"""Embedding-space geometry: isotropy score, mean-vector norm, cosine histograms."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .evaluation import Encoder, normalize_rows
from .exceptions import DataError, NumericalError


def jacobi_eigh(a, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Iterates until the off-diagonal Frobenius norm drops below ``tol`` times the
    Frobenius norm of the input. Returns ``(eigenvalues, eigenvectors)`` with
    eigenvectors as columns, sorted by ascending eigenvalue.
    """
    A = np.array(a, dtype=float)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise ValueError("matrix must be square")
    if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise ValueError("matrix must be symmetric")
    A = (A + A.T) / 2
    V = np.eye(n)
    scale = np.linalg.norm(A)
    threshold = tol * scale
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p, col_q = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p, row_q = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        raise NumericalError("Jacobi iteration did not converge")
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def _as_matrix(vectors) -> np.ndarray:
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    if not np.isfinite(V).all():
        raise DataError("vectors must be finite")
    return V


def isotropy_score(vectors) -> float:
    """min_c Z(c) / max_c Z(c) with Z(c) = sum_v exp(c . v) over the +/- eigenvectors of V^T V."""
    V = _as_matrix(vectors)
    if V.shape[0] < 2:
        raise DataError("need at least 2 vectors")
    if not np.any(V):
        raise DataError("rank-0 input: all vectors are zero")
    _, U = jacobi_eigh(V.T @ V)
    directions = np.concatenate([U, -U], axis=1)
    log_z = logsumexp(V @ directions, axis=0)
    return float(np.exp(log_z.min() - log_z.max()))


def mvn(vectors) -> float:
    """Euclidean norm of the mean vector."""
    V = _as_matrix(vectors)
    if V.shape[0] < 1:
        raise DataError("need at least one vector")
    return float(np.linalg.norm(V.mean(axis=0)))


@dataclass
class CosineHistogram:
    edges: list[float]
    positive_counts: list[int]
    negative_counts: list[int]
    positive_mean: float
    negative_mean: float

    def to_dict(self):
        return {"edges": self.edges, "positive_counts": self.positive_counts,
                "negative_counts": self.negative_counts,
                "positive_mean": self.positive_mean, "negative_mean": self.negative_mean}


@dataclass
class IsotropyReport:
    is_score: float
    mvn: float
    sample_size: int
    histogram: CosineHistogram | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {"is_score": self.is_score, "mvn": self.mvn, "sample_size": self.sample_size}
        if self.histogram is not None:
            d["histogram"] = self.histogram.to_dict()
        d.update(self.extra)
        return d


def histogram_from_cosines(positive: np.ndarray, negative: np.ndarray, bins: int) -> CosineHistogram:
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if len(positive) == 0 or len(negative) == 0:
        raise DataError("both pair classes must be non-empty")
    edges = np.linspace(-1.0, 1.0, bins + 1)
    pos = np.clip(positive, -1.0, 1.0)
    neg = np.clip(negative, -1.0, 1.0)
    return CosineHistogram(edges.tolist(), np.histogram(pos, edges)[0].tolist(),
                           np.histogram(neg, edges)[0].tolist(),
                           float(pos.mean()), float(neg.mean()))


def cosine_histogram(positive_pairs: Sequence[tuple[str, str]],
                     negative_pairs: Sequence[tuple[str, str]],
                     encode: Encoder, bins: int = 20) -> CosineHistogram:
    """Histogram of positive- and negative-pair cosines over uniform bins on [-1, 1]."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if not positive_pairs or not negative_pairs:
        raise DataError("both pair classes must be non-empty")

    def cosines(pairs):
        a = normalize_rows(encode([p[0] for p in pairs]))
        b = normalize_rows(encode([p[1] for p in pairs]))
        return np.sum(a * b, axis=1)

    return histogram_from_cosines(cosines(positive_pairs), cosines(negative_pairs), bins)


def isotropy_report(encode: Encoder, texts: Sequence[str],
                    positive_pairs=None, negative_pairs=None, bins: int = 20) -> IsotropyReport:
    V = encode(list(texts))
    hist = None
    if positive_pairs and negative_pairs:
        hist = cosine_histogram(positive_pairs, negative_pairs, encode, bins)
    return IsotropyReport(isotropy_score(V), mvn(V), len(V), hist)
