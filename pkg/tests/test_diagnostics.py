import math

import numpy as np
import pytest
from scipy.stats import ortho_group

from mirrorbert.diagnostics import (cosine_histogram, histogram_from_cosines, isotropy_report,
                                    isotropy_score, jacobi_eigh, mvn)
from mirrorbert.exceptions import DataError


def is_oracle(V):
    """Z over +/- eigenvectors from LAPACK, summed term by term."""
    _, U = np.linalg.eigh(V.T @ V)
    zs = []
    for k in range(U.shape[1]):
        for sign in (1.0, -1.0):
            c = sign * U[:, k]
            zs.append(math.fsum(math.exp(float(np.dot(c, v))) for v in V))
    return min(zs) / max(zs)


class TestJacobi:
    def test_matches_lapack(self):
        rng = np.random.default_rng(0)
        for n in (1, 2, 3, 6, 16, 64):
            X = rng.normal(size=(n + 5, n))
            A = X.T @ X
            w, U = jacobi_eigh(A)
            assert np.allclose(w, np.linalg.eigvalsh(A), rtol=0, atol=1e-10 * np.abs(w).max())
            assert np.allclose(U.T @ U, np.eye(n), atol=1e-12)
            assert np.abs(A @ U - U * w).max() < 1e-10 * np.abs(w).max()

    def test_diagonal_input(self):
        w, U = jacobi_eigh(np.diag([3.0, 1.0, 2.0]))
        assert w.tolist() == [1.0, 2.0, 3.0]
        assert np.array_equal(np.abs(U), np.eye(3)[:, [1, 2, 0]])

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestIsotropy:
    def test_symmetric_1d(self):
        assert isotropy_score([[2.0], [-2.0]]) == 1.0

    def test_copies_of_one_vector(self, rng):
        v = rng.normal(size=5)
        v /= np.linalg.norm(v)
        assert isotropy_score(np.tile(v, (7, 1))) == pytest.approx(math.exp(-2), abs=1e-12)

    def test_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            d = int(rng.integers(1, 7))
            V = rng.normal(size=(int(rng.integers(2, 30)), d)) * rng.uniform(0.1, 1.5)
            V += rng.normal(size=d) * rng.uniform(0, 1)
            assert abs(isotropy_score(V) - is_oracle(V)) < 1e-8

    def test_rotation_invariance(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            V = rng.normal(size=(40, 5)) * np.array([2.0, 1.5, 1.0, 0.7, 0.4]) + 0.3
            Q = ortho_group.rvs(5, random_state=rng)
            assert abs(isotropy_score(V @ Q) - isotropy_score(V)) < 1e-8

    def test_range(self, rng):
        for _ in range(20):
            s = isotropy_score(rng.normal(size=(10, 4)) + rng.normal(size=4))
            assert 0 < s <= 1

    def test_large_norms_do_not_overflow(self, rng):
        s = isotropy_score(rng.normal(size=(50, 8)) * 400 + 50)
        assert 0 <= s <= 1

    def test_errors(self):
        with pytest.raises(DataError):
            isotropy_score(np.zeros((3, 2)))
        with pytest.raises(DataError):
            isotropy_score([[1.0, 2.0]])


class TestMVN:
    def test_examples(self, rng):
        v = rng.normal(size=4)
        assert mvn([v, -v]) == 0.0
        assert mvn([[3.0, 4.0]]) == 5.0

    def test_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            V = rng.normal(size=(int(rng.integers(1, 40)), int(rng.integers(1, 9)))) + 1
            mean = [math.fsum(col) / len(col) for col in V.T]
            assert abs(mvn(V) - math.sqrt(math.fsum(m * m for m in mean))) < 1e-12

    def test_centered(self, rng):
        V = rng.normal(size=(100, 6)) + 5
        assert mvn(V - V.mean(axis=0)) < 1e-12


def table_encoder(table):
    return lambda texts: np.array([table[t] for t in texts], dtype=float)


class TestHistogram:
    table = {"a": [1.0, 0.2], "b": [0.1, 1.0], "c": [-1.0, 0.3], "d": [0.5, -0.5]}

    def test_identical_pairs_in_top_bin(self):
        enc = table_encoder(self.table)
        h = cosine_histogram([("a", "a"), ("b", "b"), ("c", "c")], [("a", "c"), ("b", "d")], enc, 10)
        assert h.positive_counts[-1] == 3 and sum(h.positive_counts) == 3
        assert sum(h.negative_counts) == 2
        assert h.edges[0] == -1.0 and h.edges[-1] == 1.0 and len(h.edges) == 11
        assert h.positive_mean == pytest.approx(1.0)

    def test_conservation(self, rng):
        pos, neg = rng.uniform(-1, 1, 137), rng.uniform(-1, 1, 59)
        h = histogram_from_cosines(pos, neg, 7)
        assert sum(h.positive_counts) == 137 and sum(h.negative_counts) == 59
        widths = np.diff(h.edges)
        assert np.allclose(widths, widths[0])

    def test_errors(self):
        enc = table_encoder(self.table)
        with pytest.raises(ValueError):
            cosine_histogram([("a", "b")], [("a", "c")], enc, 1)
        with pytest.raises(DataError):
            cosine_histogram([], [("a", "c")], enc)

    def test_report(self):
        enc = table_encoder(self.table)
        rep = isotropy_report(enc, list(self.table), [("a", "a")], [("a", "c")], bins=4)
        d = rep.to_dict()
        assert d["sample_size"] == 4 and 0 < d["is_score"] <= 1 and d["mvn"] >= 0
        assert sum(d["histogram"]["positive_counts"]) == 1
