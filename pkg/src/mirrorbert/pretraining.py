"""Toy masked-language-model pretraining that produces the "base MLM" checkpoint."""

from __future__ import annotations

import time
from typing import Sequence

import numpy as np

from .encoder import (DropoutMode, EncoderParameters, make_dropout_plan, maskable_positions,
                      mlm_pretrain_step)
from .optim import OptimizerState, adamw_step


def pretrain_mlm(params: EncoderParameters, sequences: Sequence[Sequence[int]], *,
                 epochs: int = 10, batch_size: int = 32, lr: float = 1e-3,
                 mask_rate: float = 0.15, weight_decay: float = 0.01, seed: int = 0,
                 dropout_mode: DropoutMode | str = DropoutMode.INDEPENDENT):
    """Run MLM training over ``sequences``; returns ``(params, log)``."""
    usable = [s for s in sequences if len(s) >= 2 and maskable_positions(s)]
    rng = np.random.default_rng(seed)
    state = OptimizerState.for_params(params.tensors, lr=lr, weight_decay=weight_decay)
    params = params.clone()
    log = []
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(len(usable))
        for start in range(0, len(order), batch_size):
            t0 = time.perf_counter()
            batch = [usable[i] for i in order[start:start + batch_size]]
            plan = make_dropout_plan(params.config, dropout_mode, seed * 1_000_003 + step)
            loss, grads = mlm_pretrain_step(params, batch, mask_rate, rng, plan)
            tensors, state = adamw_step(state, params.tensors, grads)
            params = EncoderParameters(params.config, tensors)
            log.append({"epoch": epoch, "batch": start // batch_size, "loss": loss,
                        "wall_ms": (time.perf_counter() - t0) * 1e3})
            step += 1
    return params, log
