"""Contrastive objectives and the mirror fine-tuning loop."""

from __future__ import annotations

import json
import math
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .augment import AugmentSpec, apply_to_pair
from .corpus import MirrorPair
from .encoder import (DropoutMode, EncoderConfig, EncoderParameters, forward_batch,
                      make_dropout_plan, value_and_gradients)
from .exceptions import DataError
from .optim import OptimizerState, adamw_step

__all__ = [
    "Objective", "LossConfig", "TrainConfig", "info_nce_loss", "ms_loss", "ms_loss_terms",
    "mine_hard_pairs", "mirror_tune", "OptimizerState", "adamw_step",
]


class Objective(str, Enum):
    INFONCE = "infonce"
    MS_LOSS = "ms_loss"


@dataclass(frozen=True)
class LossConfig:
    objective: Objective = Objective.INFONCE
    temperature: float = 0.04
    symmetric_anchors: bool = False
    ms_alpha: float = 2.0
    ms_beta: float = 50.0
    ms_lambda: float = 0.5
    mining_enabled: bool = True
    mining_margin: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "objective", Objective(self.objective))
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.ms_alpha <= 0 or self.ms_beta <= 0:
            raise ValueError("ms_alpha and ms_beta must be > 0")

    def to_dict(self):
        d = asdict(self)
        d["objective"] = self.objective.value
        return d


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2
    pairs_per_batch: int = 200
    seed: int = 0
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    dropout_mode: DropoutMode = DropoutMode.INDEPENDENT
    loss: LossConfig = field(default_factory=LossConfig)
    lr: float = 2e-5
    weight_decay: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "dropout_mode", DropoutMode(self.dropout_mode))
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.pairs_per_batch < 2:
            raise ValueError("pairs_per_batch must be >= 2 so that negatives exist")

    def to_dict(self):
        return {"epochs": self.epochs, "pairs_per_batch": self.pairs_per_batch,
                "seed": self.seed, "augment": self.augment.to_dict(),
                "dropout_mode": self.dropout_mode.value, "loss": self.loss.to_dict(),
                "lr": self.lr, "weight_decay": self.weight_decay}


# -- losses ----------------------------------------------------------------------

def _cosine_matrix(embeddings, labels):
    emb = torch.as_tensor(embeddings, dtype=torch.float64)
    labels = [int(l) for l in labels]
    if emb.ndim != 2 or emb.shape[0] != len(labels):
        raise ValueError("embeddings must be (n, d) with one label per row")
    counts = Counter(labels)
    bad = [l for l, c in counts.items() if c != 2]
    if bad:
        raise DataError(f"label {bad[0]} appears {counts[bad[0]]} times; each label needs exactly 2")
    if len(counts) < 2:
        raise DataError("a batch needs at least two pairs")
    norms = emb.norm(dim=1, keepdim=True)
    if (norms == 0).any():
        raise DataError("degenerate embedding")
    unit = emb / norms
    return unit @ unit.T, torch.as_tensor(labels)


def info_nce_loss(embeddings, labels: Sequence[int], temperature: float,
                  symmetric_anchors: bool = False):
    """Mirror InfoNCE summed over anchors; returns ``(loss, per_anchor_terms)``.

    The positive partner is left out of the denominator, so the denominator runs
    over the ``2b - 2`` items carrying a different label. Without symmetric
    anchors only the first copy of every label is an anchor.
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    sim, lab = _cosine_matrix(embeddings, labels)
    n = sim.shape[0]
    same = lab[:, None] == lab[None, :]
    eye = torch.eye(n, dtype=torch.bool)
    partner = (same & ~eye).float().argmax(dim=1)
    if symmetric_anchors:
        anchors = torch.arange(n)
    else:
        first = {}
        for i, l in enumerate(lab.tolist()):
            first.setdefault(l, i)
        anchors = torch.as_tensor(sorted(first.values()))
    logits = sim / temperature
    pos = logits[anchors, partner[anchors]]
    neg = logits[anchors].masked_fill(same[anchors], float("-inf"))
    terms = torch.logsumexp(neg, dim=1) - pos
    return terms.sum(), terms


def mine_hard_pairs(embeddings, labels: Sequence[int], margin: float):
    """Multi-similarity mining: keep hard negatives above ``min_pos - margin`` and
    hard positives below ``max_neg + margin`` per anchor."""
    sim, lab = _cosine_matrix(embeddings, labels)
    sim = sim.detach().numpy()
    lab = lab.numpy()
    positives, negatives = set(), set()
    for i in range(len(lab)):
        pos_j = [j for j in range(len(lab)) if j != i and lab[j] == lab[i]]
        neg_j = [j for j in range(len(lab)) if lab[j] != lab[i]]
        min_pos = min(sim[i, j] for j in pos_j)
        max_neg = max(sim[i, j] for j in neg_j)
        negatives.update((i, j) for j in neg_j if sim[i, j] > min_pos - margin)
        positives.update((i, j) for j in pos_j if sim[i, j] < max_neg + margin)
    return positives, negatives


def ms_loss_terms(embeddings, labels: Sequence[int], config: LossConfig) -> torch.Tensor:
    sim, lab = _cosine_matrix(embeddings, labels)
    n = sim.shape[0]
    same = lab[:, None] == lab[None, :]
    pos_mask = same & ~torch.eye(n, dtype=torch.bool)
    neg_mask = ~same
    if config.mining_enabled:
        mined_pos, mined_neg = mine_hard_pairs(embeddings.detach()
                                               if torch.is_tensor(embeddings) else embeddings,
                                               labels, config.mining_margin)
        pos_mask = torch.zeros(n, n, dtype=torch.bool)
        neg_mask = torch.zeros(n, n, dtype=torch.bool)
        for i, j in mined_pos:
            pos_mask[i, j] = True
        for i, j in mined_neg:
            neg_mask[i, j] = True
    a, b, lam = config.ms_alpha, config.ms_beta, config.ms_lambda
    zero = torch.zeros_like(sim)
    pos_sum = torch.where(pos_mask, torch.exp(-a * (sim - lam)), zero).sum(1)
    neg_sum = torch.where(neg_mask, torch.exp(b * (sim - lam)), zero).sum(1)
    return torch.log1p(pos_sum) / a + torch.log1p(neg_sum) / b


def ms_loss(embeddings, labels: Sequence[int], config: LossConfig) -> torch.Tensor:
    """Multi-similarity loss averaged over all anchors of the batch."""
    return ms_loss_terms(embeddings, labels, config).mean()


def batch_loss(embeddings, labels, config: LossConfig) -> torch.Tensor:
    if config.objective is Objective.MS_LOSS:
        return ms_loss(embeddings, labels, config)
    return info_nce_loss(embeddings, labels, config.temperature, config.symmetric_anchors)[0]


# -- training loop ---------------------------------------------------------------

def _step_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=key).generate_state(1)[0])


def mirror_tune(params: EncoderParameters, dataset: Sequence[MirrorPair], train: TrainConfig,
                encoder_config: EncoderConfig | None = None,
                texts: Sequence[str] | None = None,
                tokenizer: Callable[[str], list[int]] | None = None,
                log_path: str | Path | None = None):
    """Contrastively fine-tune ``params`` on self-duplicated pairs.

    Returns ``(tuned_params, log)`` where ``log`` holds one record per optimizer
    step: ``{"epoch", "batch", "loss", "wall_ms"}``. The trailing incomplete
    batch of every epoch is dropped.
    """
    b = train.pairs_per_batch
    if len(dataset) < b:
        raise DataError(f"dataset of {len(dataset)} pairs is smaller than one batch of {b}")
    if encoder_config is not None:
        params = EncoderParameters(encoder_config.validate(), params.tensors)
    params = params.clone()
    config = params.config
    state = OptimizerState.for_params(params.tensors, lr=train.lr,
                                      weight_decay=train.weight_decay)
    order_rng = np.random.default_rng(_step_seed(train.seed, 0))
    aug_rng = np.random.default_rng(_step_seed(train.seed, 1, train.augment.seed))
    log = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        step = 0
        for epoch in range(train.epochs):
            order = order_rng.permutation(len(dataset))
            for bi in range(len(dataset) // b):
                t0 = time.perf_counter()
                idx = order[bi * b:(bi + 1) * b]
                items, labels = [], []
                for i in idx:
                    pair = apply_to_pair(dataset[i], train.augment, aug_rng,
                                         texts[i] if texts is not None else None, tokenizer)
                    items += [pair.left_tokens, pair.right_tokens]
                    labels += [pair.label, pair.label]
                plan = make_dropout_plan(config, train.dropout_mode,
                                         _step_seed(train.seed, 2, step))

                def loss_fn(p):
                    pooled, _, _ = forward_batch(p, items, plan, stream_ids=labels)
                    return batch_loss(pooled, labels, train.loss)

                loss, grads = value_and_gradients(params, loss_fn)
                new_tensors, state = adamw_step(state, params.tensors, grads)
                params = EncoderParameters(config, new_tensors)
                record = {"epoch": epoch, "batch": bi, "loss": loss,
                          "wall_ms": (time.perf_counter() - t0) * 1e3}
                log.append(record)
                if log_fh is not None:
                    log_fh.write(json.dumps(record) + "\n")
                step += 1
    finally:
        if log_fh is not None:
            log_fh.close()
    return params, log


def count_steps(n_pairs: int, pairs_per_batch: int, epochs: int) -> int:
    return epochs * (n_pairs // pairs_per_batch)


def mean_loss(log, first: int | None = None, last: int | None = None) -> float:
    losses = [r["loss"] for r in log]
    if first is not None:
        losses = losses[:first]
    if last is not None:
        losses = losses[-last:]
    return math.fsum(losses) / len(losses)
