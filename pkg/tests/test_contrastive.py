import json
import math

import numpy as np
import pytest
import torch

from mirrorbert.augment import AugmentSpec
from mirrorbert.contrastive import (LossConfig, TrainConfig, count_steps, info_nce_loss,
                                    mean_loss, mine_hard_pairs, mirror_tune, ms_loss,
                                    ms_loss_terms)
from mirrorbert.corpus import build_vocabulary, generate_random_strings, make_mirror_dataset
from mirrorbert.encoder import EncoderConfig, init_parameters
from mirrorbert.exceptions import DataError, NumericalError
from mirrorbert.optim import OptimizerState, adamw_step


def _cos(u, v):
    return sum(a * b for a, b in zip(u, v)) / math.sqrt(sum(a * a for a in u) * sum(b * b for b in v))


def infonce_oracle(emb, labels, tau, symmetric):
    """Direct enumeration of every similarity term, one anchor at a time."""
    emb = [list(map(float, e)) for e in emb]
    seen, total = set(), 0.0
    for i, li in enumerate(labels):
        if not symmetric and li in seen:
            continue
        seen.add(li)
        j = next(j for j in range(len(labels)) if j != i and labels[j] == li)
        num = math.exp(_cos(emb[i], emb[j]) / tau)
        den = sum(math.exp(_cos(emb[i], emb[k]) / tau)
                  for k in range(len(labels)) if labels[k] != li)
        total += -math.log(num / den)
    return total


def random_batch(rng, b, d):
    emb = rng.normal(size=(2 * b, d))
    labels = list(rng.permutation(np.repeat(np.arange(b), 2)))
    return emb, labels


class TestInfoNCE:
    def test_separated_example(self):
        emb = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        loss, terms = info_nce_loss(emb, [0, 0, 1, 1], 1.0)
        assert np.allclose(terms.numpy(), math.log(2) - 1, atol=1e-15)
        assert float(loss) == pytest.approx(2 * (math.log(2) - 1), abs=1e-14)
        assert float(loss) == pytest.approx(-0.6137, abs=1e-4)

    def test_equal_cosines(self):
        # regular simplex: every pairwise cosine is -1/3
        emb = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
        loss, terms = info_nce_loss(emb, [0, 0, 1, 1], 1.0)
        assert np.allclose(terms.numpy(), math.log(2), atol=1e-15)
        assert float(loss) == pytest.approx(1.3863, abs=1e-4)

    def test_oracle_equivalence(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            b, d = int(rng.integers(2, 9)), int(rng.integers(1, 9))
            emb, labels = random_batch(rng, b, d)
            tau = float(rng.uniform(0.05, 2.0))
            sym = bool(rng.integers(2))
            got = float(info_nce_loss(emb, labels, tau, sym)[0])
            assert abs(got - infonce_oracle(emb, labels, tau, sym)) < 1e-10

    def test_term_counts(self, rng):
        emb, labels = random_batch(rng, 5, 4)
        assert len(info_nce_loss(emb, labels, 0.1, False)[1]) == 5
        assert len(info_nce_loss(emb, labels, 0.1, True)[1]) == 10

    def test_permutation_invariance(self, rng):
        emb, labels = random_batch(rng, 6, 4)
        perm = rng.permutation(12)
        a = float(info_nce_loss(emb, labels, 0.2, True)[0])
        b = float(info_nce_loss(emb[perm], [labels[i] for i in perm], 0.2, True)[0])
        assert a == pytest.approx(b, abs=1e-12)

    def test_temperature_scaling(self, rng):
        # dividing all similarities by c equals multiplying tau by c; a shift of
        # every similarity by a constant cancels
        from mirrorbert.contrastive import _cosine_matrix
        emb, labels = random_batch(rng, 4, 3)
        sim, lab = _cosine_matrix(emb, labels)
        base = float(info_nce_loss(emb, labels, 0.3)[0])
        assert float(info_nce_loss(emb, labels, 0.6)[0]) == pytest.approx(
            _loss_from_sim(sim / 2, lab, 0.3), abs=1e-12)
        assert base == pytest.approx(_loss_from_sim(sim + 0.7, lab, 0.3), abs=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        emb, labels = random_batch(rng, 4, 6)
        x = torch.tensor(emb, requires_grad=True)
        info_nce_loss(x, labels, 0.5, True)[0].backward()
        h = 1e-6
        num = np.zeros_like(emb)
        for idx in np.ndindex(emb.shape):
            e1, e2 = emb.copy(), emb.copy()
            e1[idx] += h
            e2[idx] -= h
            num[idx] = (infonce_oracle(e1, labels, 0.5, True)
                        - infonce_oracle(e2, labels, 0.5, True)) / (2 * h)
        rel = np.abs(x.grad.numpy() - num).max() / np.abs(num).max()
        assert rel < 1e-6

    def test_label_errors(self):
        with pytest.raises(DataError):
            info_nce_loss(np.ones((3, 2)), [0, 0, 1], 1.0)
        with pytest.raises(DataError):
            info_nce_loss(np.ones((2, 2)), [0, 0], 1.0)

    def test_degenerate_embedding(self):
        emb = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        with pytest.raises(DataError, match="degenerate embedding"):
            info_nce_loss(emb, [0, 0, 1, 1], 1.0)


def _loss_from_sim(sim, lab, tau):
    total, seen = 0.0, set()
    n = len(lab)
    for i in range(n):
        li = int(lab[i])
        if li in seen:
            continue
        seen.add(li)
        j = next(j for j in range(n) if j != i and lab[j] == li)
        den = sum(math.exp(float(sim[i, k]) / tau) for k in range(n) if lab[k] != li)
        total += math.log(den) - float(sim[i, j]) / tau
    return total


def mining_oracle(emb, labels, eps):
    n = len(labels)
    S = [[_cos(emb[i], emb[j]) for j in range(n)] for i in range(n)]
    P, N = set(), set()
    for i in range(n):
        pos = [j for j in range(n) if j != i and labels[j] == labels[i]]
        neg = [j for j in range(n) if labels[j] != labels[i]]
        lo, hi = min(S[i][j] for j in pos), max(S[i][j] for j in neg)
        N |= {(i, j) for j in neg if S[i][j] > lo - eps}
        P |= {(i, j) for j in pos if S[i][j] < hi + eps}
    return P, N


def ms_oracle(emb, labels, alpha, beta, lam, pairs=None):
    n = len(labels)
    if pairs is None:
        P = {(i, j) for i in range(n) for j in range(n) if i != j and labels[i] == labels[j]}
        N = {(i, j) for i in range(n) for j in range(n) if labels[i] != labels[j]}
    else:
        P, N = pairs
    total = 0.0
    for i in range(n):
        sp = sum(math.exp(-alpha * (_cos(emb[i], emb[j]) - lam)) for (a, j) in P if a == i)
        sn = sum(math.exp(beta * (_cos(emb[i], emb[j]) - lam)) for (a, j) in N if a == i)
        total += math.log(1 + sp) / alpha + math.log(1 + sn) / beta
    return total / n


class TestMultiSimilarity:
    def test_all_at_lambda(self):
        b, lam = 3, 0.5
        d = 2 * b + 1
        emb = np.zeros((2 * b, d))
        emb[:, 0] = math.sqrt(lam)
        emb[np.arange(2 * b), np.arange(1, 2 * b + 1)] = math.sqrt(1 - lam)
        cfg = LossConfig("ms_loss", mining_enabled=False, ms_lambda=lam)
        terms = ms_loss_terms(emb, [0, 0, 1, 1, 2, 2], cfg).numpy()
        expect = math.log(2) / cfg.ms_alpha + math.log(1 + 2 * b - 2) / cfg.ms_beta
        assert np.allclose(terms, expect, atol=1e-12)

    def test_no_mined_pairs_contribute_zero(self):
        emb = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        cfg = LossConfig("ms_loss")
        assert np.all(ms_loss_terms(emb, [0, 0, 1, 1], cfg).numpy() == 0)

    def test_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            emb, labels = random_batch(rng, int(rng.integers(2, 6)), 4)
            for mining in (False, True):
                cfg = LossConfig("ms_loss", mining_enabled=mining)
                pairs = mining_oracle(emb, labels, cfg.mining_margin) if mining else None
                want = ms_oracle(emb, labels, cfg.ms_alpha, cfg.ms_beta, cfg.ms_lambda, pairs)
                assert abs(float(ms_loss(emb, labels, cfg)) - want) < 1e-10


class TestMining:
    def test_separated(self):
        emb = np.array([[1.0, 0.0], [1.0, 0.01], [0.0, 1.0], [0.01, 1.0]])
        assert mine_hard_pairs(emb, [0, 0, 1, 1], 0.1) == (set(), set())

    def test_infinite_margin_keeps_all(self, rng):
        emb, labels = random_batch(rng, 4, 3)
        P, N = mine_hard_pairs(emb, labels, math.inf)
        assert len(P) == 8 and len(N) == 8 * 6

    def test_oracle_and_monotone(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            emb, labels = random_batch(rng, int(rng.integers(2, 7)), 3)
            prev = (set(), set())
            for eps in (-0.5, -0.1, 0.0, 0.1, 0.3, 1.0):
                got = mine_hard_pairs(emb, labels, eps)
                assert got == mining_oracle(emb, labels, eps)
                assert prev[0] <= got[0] and prev[1] <= got[1]
                prev = got


class TestAdamW:
    def test_zero_grad_zero_decay(self):
        w = {"w": torch.tensor([1.0, -2.0], dtype=torch.float64)}
        state = OptimizerState.for_params(w, lr=0.1, weight_decay=0.0)
        new, st2 = adamw_step(state, w, {"w": torch.zeros(2, dtype=torch.float64)})
        assert torch.equal(new["w"], w["w"]) and st2.step == 1

    def test_single_step_hand_oracle(self):
        w = {"w": torch.tensor(1.0, dtype=torch.float64)}
        state = OptimizerState.for_params(w, lr=0.1, weight_decay=0.01)
        new, _ = adamw_step(state, w, {"w": torch.tensor(1.0, dtype=torch.float64)})
        m, v = 0.1 * 1.0, 0.001 * 1.0
        m_hat, v_hat = m / (1 - 0.9), v / (1 - 0.999)
        want = 1.0 - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8) - 0.1 * 0.01 * 1.0
        assert float(new["w"]) == pytest.approx(want, abs=1e-15)
        assert float(new["w"]) == pytest.approx(0.899, abs=1e-8)

    def test_decoupled_decay(self):
        w = {"w": torch.tensor([3.0], dtype=torch.float64)}
        state = OptimizerState.for_params(w, lr=0.05, weight_decay=0.2)
        cur = w
        for k in range(1, 6):
            cur, state = adamw_step(state, cur, {"w": torch.zeros(1, dtype=torch.float64)})
            assert float(cur["w"]) == pytest.approx(3.0 * (1 - 0.05 * 0.2) ** k, abs=1e-14)

    def test_inputs_not_mutated(self):
        w = {"w": torch.tensor([1.0], dtype=torch.float64)}
        state = OptimizerState.for_params(w)
        adamw_step(state, w, {"w": torch.tensor([0.5], dtype=torch.float64)})
        assert float(w["w"]) == 1.0 and state.step == 0 and float(state.m["w"]) == 0.0

    def test_non_finite_gradient(self):
        w = {"enc.w": torch.tensor([1.0], dtype=torch.float64)}
        with pytest.raises(NumericalError, match="enc.w"):
            adamw_step(OptimizerState(), w, {"enc.w": torch.tensor([float("nan")])})


def _toy(n, seed=0, d=16):
    items = generate_random_strings(n, 3, 6, seed=seed)
    vocab = build_vocabulary(items, n + 4)
    cfg = EncoderConfig(vocab_size=len(vocab), num_layers=1, hidden_dim=d, num_heads=2,
                        ff_dim=2 * d, max_len=4)
    return init_parameters(cfg, seed), make_mirror_dataset(items, vocab, 4)


class TestMirrorTune:
    def test_step_count(self):
        params, pairs = _toy(1000)
        train = TrainConfig(epochs=2, pairs_per_batch=100, lr=1e-3)
        _, log = mirror_tune(params, pairs, train)
        assert len(log) == count_steps(1000, 100, 2) == 20
        assert [r["epoch"] for r in log] == [0] * 10 + [1] * 10

    def test_partial_batch_dropped(self):
        params, pairs = _toy(250)
        _, log = mirror_tune(params, pairs, TrainConfig(epochs=1, pairs_per_batch=100))
        assert len(log) == 2

    def test_deterministic(self, tmp_path):
        params, pairs = _toy(200)
        train = TrainConfig(epochs=2, pairs_per_batch=50, lr=1e-3,
                            augment=AugmentSpec("span_mask", 1))
        p1, log1 = mirror_tune(params, pairs, train, log_path=tmp_path / "a.jsonl")
        p2, log2 = mirror_tune(params, pairs, train)
        assert [r["loss"] for r in log1] == [r["loss"] for r in log2]
        assert p1.equal(p2)
        lines = [json.loads(x) for x in (tmp_path / "a.jsonl").read_text().splitlines()]
        assert [set(r) for r in lines] == [{"epoch", "batch", "loss", "wall_ms"}] * len(log1)

    def test_input_params_untouched(self):
        params, pairs = _toy(100)
        before = params.clone()
        mirror_tune(params, pairs, TrainConfig(epochs=1, pairs_per_batch=50, lr=1e-2))
        assert params.equal(before)

    def test_too_small(self):
        params, pairs = _toy(10)
        with pytest.raises(DataError):
            mirror_tune(params, pairs, TrainConfig(pairs_per_batch=20))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(pairs_per_batch=1)
        with pytest.raises(ValueError):
            LossConfig(temperature=0)

    def test_loss_trend_over_seeds(self):
        wins = 0
        for seed in range(5):
            params, pairs = _toy(500, seed=seed)
            train = TrainConfig(epochs=2, pairs_per_batch=25, seed=seed, lr=1e-3,
                                loss=LossConfig(temperature=0.2))
            _, log = mirror_tune(params, pairs, train)
            wins += mean_loss(log, last=10) < mean_loss(log, first=10)
        assert wins >= 4

    def test_ms_objective_runs(self):
        params, pairs = _toy(100)
        train = TrainConfig(epochs=1, pairs_per_batch=20, loss=LossConfig("ms_loss"))
        _, log = mirror_tune(params, pairs, train)
        assert all(math.isfinite(r["loss"]) for r in log)
