"""AdamW with decoupled weight decay over name -> tensor mappings."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .exceptions import NumericalError


@dataclass
class OptimizerState:
    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)

    @classmethod
    def for_params(cls, tensors: dict[str, torch.Tensor], **hyper) -> "OptimizerState":
        state = cls(**hyper)
        state.m = {k: torch.zeros_like(t) for k, t in tensors.items()}
        state.v = {k: torch.zeros_like(t) for k, t in tensors.items()}
        return state


def adamw_step(state: OptimizerState, params: dict[str, torch.Tensor],
               grads: dict[str, torch.Tensor]):
    """One AdamW update; returns new ``(params, state)`` without mutating the inputs.

    w <- w - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * w
    """
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for {name}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape mismatch for {name}")
    if not state.m:
        state = OptimizerState.for_params(params, lr=state.lr, beta1=state.beta1,
                                          beta2=state.beta2, eps=state.eps,
                                          weight_decay=state.weight_decay, step=state.step)
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = {}, {}, {}
    for name, w in params.items():
        g = grads.get(name)
        if g is None:
            g = torch.zeros_like(w)
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_params[name] = (w - state.lr * m_hat / (torch.sqrt(v_hat) + state.eps)
                            - state.lr * state.weight_decay * w)
        new_m[name], new_v[name] = m, v
    new_state = OptimizerState(state.lr, b1, b2, state.eps, state.weight_decay, t, new_m, new_v)
    return new_params, new_state
