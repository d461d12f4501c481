"""A small post-LN transformer MLM encoder with explicit dropout/drophead streams.

All tensors are float64. Parameters live in a flat name -> tensor mapping so the
optimizer, the checkpoint format and the gradient routine can treat them alike.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .corpus import MASK_ID, PAD_ID, SPECIAL_TOKENS, Vocabulary
from .exceptions import DataError, NumericalError

DTYPE = torch.float64
CHECKPOINT_FORMAT_VERSION = 1
LN_EPS = 1e-12


class Pooling(str, Enum):
    CLS = "cls"
    MEAN = "mean"


class DropoutMode(str, Enum):
    INDEPENDENT = "independent"
    CONTROLLED = "controlled"
    DISABLED = "disabled"


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    num_layers: int = 2
    hidden_dim: int = 64
    num_heads: int = 2
    ff_dim: int = 128
    dropout_rate: float = 0.1
    drophead_rate: float = 0.0
    max_len: int = 32
    pooling: Pooling = Pooling.CLS
    mean_includes_pad: bool = False
    tie_mlm_weights: bool = True

    def __post_init__(self):
        object.__setattr__(self, "pooling", Pooling(self.pooling))

    def validate(self) -> "EncoderConfig":
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError("hidden_dim must be divisible by num_heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not 0.0 <= self.drophead_rate < 1.0:
            raise ValueError("drophead_rate must lie in [0, 1)")
        if self.vocab_size < 5:
            raise ValueError("vocab_size must be >= 5")
        if self.num_layers < 1 or self.max_len < 2 or self.ff_dim < 1:
            raise ValueError("num_layers >= 1, max_len >= 2 and ff_dim >= 1 are required")
        return self

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pooling"] = self.pooling.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


@dataclass
class EncoderParameters:
    config: EncoderConfig
    tensors: dict[str, torch.Tensor]

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def clone(self) -> "EncoderParameters":
        return EncoderParameters(self.config,
                                 {k: v.detach().clone() for k, v in self.tensors.items()})

    def with_config(self, **changes) -> "EncoderParameters":
        """Same weights under a config with different runtime fields (rates, pooling)."""
        return EncoderParameters(replace(self.config, **changes).validate(), self.tensors)

    def equal(self, other: "EncoderParameters") -> bool:
        return (self.config == other.config and self.names() == other.names()
                and all(torch.equal(self[k], other[k]) for k in self.tensors))


def parameter_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d, f, V = config.hidden_dim, config.ff_dim, config.vocab_size
    shapes = {"tok_emb": (V, d), "pos_emb": (config.max_len, d)}
    for l in range(config.num_layers):
        p = f"layers.{l}."
        for m in "qkvo":
            shapes[p + f"w{m}"] = (d, d)
            shapes[p + f"b{m}"] = (d,)
        shapes.update({
            p + "ln1_g": (d,), p + "ln1_b": (d,),
            p + "w1": (d, f), p + "b1": (f,), p + "w2": (f, d), p + "b2": (d,),
            p + "ln2_g": (d,), p + "ln2_b": (d,),
        })
    if not config.tie_mlm_weights:
        shapes["mlm_w"] = (V, d)
    shapes["mlm_b"] = (V,)
    return shapes


def init_parameters(config: EncoderConfig, seed: int) -> EncoderParameters:
    """Normal(0, 0.02) weight matrices, zero biases, unit layer-norm gains."""
    config.validate()
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("_g"):
            arr = np.ones(shape)
        elif leaf.startswith("b") or leaf.endswith("_b"):
            arr = np.zeros(shape)
        else:
            arr = rng.normal(0.0, 0.02, size=shape)
        tensors[name] = torch.from_numpy(arr).to(DTYPE)
    return EncoderParameters(config, tensors)


# -- dropout plans -------------------------------------------------------------

@dataclass
class DropoutPlan:
    """Source of the dropout and drophead masks used by one or more forward passes.

    Masks for a row are drawn from a generator keyed by the plan seed plus a
    per-row stream key, so they never depend on batch composition or padding.
    CONTROLLED plans key rows by pair label (or by token content when no label is
    given); INDEPENDENT plans key rows by a per-call counter and the row index.
    """

    mode: DropoutMode
    seed: int
    dropout_rate: float = 0.1
    drophead_rate: float = 0.0
    calls: int = field(default=0, repr=False)

    def __post_init__(self):
        self.mode = DropoutMode(self.mode)

    @property
    def active(self) -> bool:
        return self.mode is not DropoutMode.DISABLED and (
            self.dropout_rate > 0 or self.drophead_rate > 0)

    def stream_keys(self, batch: Sequence[Sequence[int]],
                    stream_ids: Sequence[int] | None) -> list[tuple[int, ...]]:
        call = self.calls
        self.calls += 1
        if self.mode is DropoutMode.CONTROLLED:
            if stream_ids is not None:
                return [(0, int(s)) for s in stream_ids]
            return [(1, *map(int, toks)) for toks in batch]
        return [(2, call, row) for row in range(len(batch))]

    def draw(self, key: tuple[int, ...], config: EncoderConfig) -> dict[str, np.ndarray]:
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=self.seed, spawn_key=key)))
        M, d, H = config.max_len, config.hidden_dim, config.num_heads
        p, ph = self.dropout_rate, self.drophead_rate
        keep = (lambda shape: (rng.random(shape) >= p) / (1.0 - p))
        masks = {"emb": keep((M, d))}
        for l in range(config.num_layers):
            masks[f"{l}.attn"] = keep((H, M, M))
            masks[f"{l}.attn_out"] = keep((M, d))
            masks[f"{l}.ffn_out"] = keep((M, d))
            masks[f"{l}.head"] = (rng.random(H) >= ph).astype(float)
        return masks


def make_dropout_plan(config: EncoderConfig, mode: DropoutMode | str, seed: int) -> DropoutPlan:
    return DropoutPlan(DropoutMode(mode), seed, config.dropout_rate, config.drophead_rate)


DISABLED_PLAN = DropoutPlan(DropoutMode.DISABLED, 0, 0.0, 0.0)


def _stack_masks(plan, batch, stream_ids, config, L):
    keys = plan.stream_keys(batch, stream_ids)
    drawn = [plan.draw(k, config) for k in keys]
    out = {}
    for name in drawn[0]:
        arr = np.stack([m[name] for m in drawn])
        if name == "emb" or name.endswith("_out"):
            arr = arr[:, :L]
        elif name.endswith(".attn"):
            arr = arr[:, :, :L, :L]
        out[name] = torch.from_numpy(arr).to(DTYPE)
    return out


# -- forward pass ----------------------------------------------------------------

def layer_norm(x, g, b):
    mu = x.mean(-1, keepdim=True)
    var = ((x - mu) ** 2).mean(-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + LN_EPS) * g + b


def pad_batch(batch: Sequence[Sequence[int]], length: int | None = None):
    L = max(len(s) for s in batch) if length is None else length
    ids = torch.full((len(batch), L), PAD_ID, dtype=torch.long)
    for i, seq in enumerate(batch):
        ids[i, :len(seq)] = torch.as_tensor(list(seq), dtype=torch.long)
    pad_mask = ids == PAD_ID
    pad_mask[:, 0] = False
    return ids, pad_mask


def _check_finite(x, where):
    if not torch.isfinite(x).all():
        raise NumericalError(f"numerical overflow in {where}")


def forward_batch(params: EncoderParameters, batch: Sequence[Sequence[int]],
                  plan: DropoutPlan | None = None,
                  stream_ids: Sequence[int] | None = None,
                  return_attention: bool = False):
    """Encode a batch of token-id sequences.

    Returns ``(pooled, states, pad_mask)`` with shapes ``(B, d)``, ``(B, L, d)``
    and ``(B, L)``; with ``return_attention`` a list of per-layer pre-dropout
    attention probabilities ``(B, H, L, L)`` is appended.
    """
    cfg = params.config
    plan = plan or DISABLED_PLAN
    if not batch:
        raise DataError("empty batch")
    for i, seq in enumerate(batch):
        if len(seq) == 0:
            raise DataError(f"row {i}: empty token sequence")
        if len(seq) > cfg.max_len:
            raise DataError(f"row {i}: sequence length {len(seq)} exceeds max_len {cfg.max_len}")
        if min(seq) < 0 or max(seq) >= cfg.vocab_size:
            raise DataError(f"row {i}: token id out of range [0, {cfg.vocab_size})")
    full_pad = cfg.pooling is Pooling.MEAN and cfg.mean_includes_pad
    ids, pad_mask = pad_batch(batch, cfg.max_len if full_pad else None)
    B, L = ids.shape
    H, dh = cfg.num_heads, cfg.head_dim
    masks = _stack_masks(plan, batch, stream_ids, cfg, L) if plan.active else None

    x = params["tok_emb"][ids] + params["pos_emb"][:L]
    if masks is not None:
        x = x * masks["emb"]
    key_bias = torch.zeros(B, 1, 1, L, dtype=DTYPE).masked_fill(
        pad_mask[:, None, None, :], float("-inf"))
    attentions = []
    for l in range(cfg.num_layers):
        p = f"layers.{l}."
        q = (x @ params[p + "wq"] + params[p + "bq"]).view(B, L, H, dh).transpose(1, 2)
        k = (x @ params[p + "wk"] + params[p + "bk"]).view(B, L, H, dh).transpose(1, 2)
        v = (x @ params[p + "wv"] + params[p + "bv"]).view(B, L, H, dh).transpose(1, 2)
        probs = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dh) + key_bias, dim=-1)
        if return_attention:
            attentions.append(probs)
        if masks is not None:
            probs = probs * masks[f"{l}.attn"]
        ctx = probs @ v
        if masks is not None:
            ctx = ctx * masks[f"{l}.head"][:, :, None, None]
        ctx = ctx.transpose(1, 2).reshape(B, L, H * dh)
        a = ctx @ params[p + "wo"] + params[p + "bo"]
        if masks is not None:
            a = a * masks[f"{l}.attn_out"]
        x = layer_norm(x + a, params[p + "ln1_g"], params[p + "ln1_b"])
        h = F.gelu(x @ params[p + "w1"] + params[p + "b1"]) @ params[p + "w2"] + params[p + "b2"]
        if masks is not None:
            h = h * masks[f"{l}.ffn_out"]
        x = layer_norm(x + h, params[p + "ln2_g"], params[p + "ln2_b"])
        _check_finite(x, f"layer {l}")
    pooled = pool(x, cfg.pooling, pad_mask, cfg.mean_includes_pad)
    if return_attention:
        return pooled, x, pad_mask, attentions
    return pooled, x, pad_mask


def forward(params: EncoderParameters, tokens: Sequence[int],
            plan: DropoutPlan | None = None, stream_id: int | None = None):
    """Encode one sequence; returns ``(pooled (d,), token_states (len, d))``."""
    ids = None if stream_id is None else [stream_id]
    pooled, states, _ = forward_batch(params, [tokens], plan, ids)
    cfg = params.config
    n = states.shape[1] if cfg.pooling is Pooling.MEAN and cfg.mean_includes_pad else len(tokens)
    return pooled[0], states[0, :n]


def pool(token_states, mode: Pooling | str, pad_mask, mean_includes_pad: bool = False):
    """Pool token states along the sequence axis (second to last).

    ``pad_mask`` is True at padded positions. Accepts numpy arrays or tensors and
    returns the same kind.
    """
    as_numpy = isinstance(token_states, np.ndarray) or isinstance(token_states, list)
    states = torch.as_tensor(np.asarray(token_states, dtype=float)) if as_numpy else token_states
    mask = torch.as_tensor(np.asarray(pad_mask, dtype=bool)) if not torch.is_tensor(pad_mask) \
        else pad_mask
    if states.shape[-2] < 1 or mask.shape[-1] != states.shape[-2]:
        raise ValueError("token_states and pad_mask must have the same nonzero length")
    mode = Pooling(mode)
    if mode is Pooling.CLS:
        out = states[..., 0, :]
    else:
        weights = torch.ones_like(mask, dtype=states.dtype) if mean_includes_pad \
            else (~mask).to(states.dtype)
        counts = weights.sum(-1, keepdim=True)
        if (counts == 0).any():
            raise DataError("no tokens to pool")
        out = (states * weights[..., None]).sum(-2) / counts
    return out.numpy() if as_numpy else out


def encode(params: EncoderParameters, sequences: Sequence[Sequence[int]],
           batch_size: int = 256) -> np.ndarray:
    """Deterministic (dropout-free) pooled embeddings as a float64 array."""
    out = []
    with torch.no_grad():
        for start in range(0, len(sequences), batch_size):
            pooled, _, _ = forward_batch(params, sequences[start:start + batch_size])
            out.append(pooled.numpy())
    return np.concatenate(out, axis=0) if out else np.zeros((0, params.config.hidden_dim))


# -- gradients -------------------------------------------------------------------

def value_and_gradients(params: EncoderParameters,
                        loss_fn: Callable[[EncoderParameters], torch.Tensor]):
    """Evaluate ``loss_fn`` and its reverse-mode gradient w.r.t. every tensor."""
    leaves = {k: v.detach().clone().requires_grad_(True) for k, v in params.tensors.items()}
    with torch.enable_grad():
        loss = loss_fn(EncoderParameters(params.config, leaves))
        loss = torch.as_tensor(loss, dtype=DTYPE)
        if not torch.isfinite(loss):
            raise NumericalError("numerical overflow in loss")
        if loss.requires_grad:
            grads = torch.autograd.grad(loss, list(leaves.values()), allow_unused=True)
        else:
            grads = [None] * len(leaves)
    out = {}
    for (name, leaf), g in zip(leaves.items(), grads):
        g = torch.zeros_like(leaf) if g is None else g.detach()
        if not torch.isfinite(g).all():
            raise NumericalError(f"numerical overflow in gradient of {name}")
        out[name] = g
    return float(loss.detach()), out


def gradients(params: EncoderParameters, loss_fn) -> dict[str, torch.Tensor]:
    return value_and_gradients(params, loss_fn)[1]


# -- masked language modelling -----------------------------------------------------

def maskable_positions(tokens: Sequence[int]) -> list[int]:
    return [i for i, t in enumerate(tokens) if t >= len(SPECIAL_TOKENS)]


def choose_mlm_positions(tokens: Sequence[int], mask_rate: float,
                         rng: np.random.Generator) -> list[int]:
    """``ceil(mask_rate * n)`` of the n non-special positions, sorted."""
    cand = maskable_positions(tokens)
    if not cand:
        return []
    n = min(len(cand), math.ceil(mask_rate * len(cand)))
    return sorted(int(i) for i in rng.choice(cand, size=n, replace=False))


def mlm_logits(params: EncoderParameters, states: torch.Tensor) -> torch.Tensor:
    w = params["tok_emb"] if params.config.tie_mlm_weights else params["mlm_w"]
    return states @ w.T + params["mlm_b"]


def mlm_loss(params: EncoderParameters, batch: Sequence[Sequence[int]], mask_rate: float,
             rng: np.random.Generator, plan: DropoutPlan | None = None) -> torch.Tensor:
    if not 0.0 < mask_rate < 1.0:
        raise ValueError("mask_rate must lie in (0, 1)")
    inputs, rows, cols, targets = [], [], [], []
    for seq in batch:
        if len(seq) < 2:
            continue
        positions = choose_mlm_positions(seq, mask_rate, rng)
        if not positions:
            continue
        masked = list(seq)
        for pos in positions:
            targets.append(seq[pos])
            masked[pos] = MASK_ID
            rows.append(len(inputs))
            cols.append(pos)
        inputs.append(masked)
    if not inputs:
        raise DataError("no sequence in the batch has a maskable token")
    _, states, _ = forward_batch(params, inputs, plan)
    logits = mlm_logits(params, states[rows, cols])
    return F.cross_entropy(logits, torch.as_tensor(targets, dtype=torch.long))


def mlm_pretrain_step(params: EncoderParameters, batch: Sequence[Sequence[int]],
                      mask_rate: float, rng: np.random.Generator,
                      plan: DropoutPlan | None = None):
    """Masked-token cross-entropy and its gradients for one batch."""
    if all(len(s) < 2 for s in batch):
        raise DataError("all sequences in the batch are shorter than 2 tokens")
    return value_and_gradients(params, lambda p: mlm_loss(p, batch, mask_rate, rng, plan))


# -- checkpoints -------------------------------------------------------------------

def save_checkpoint(path: str | Path, params: EncoderParameters,
                    vocab: Vocabulary | None = None) -> None:
    """Write an ``.npz`` container: a JSON ``__meta__`` entry plus one float64 array per tensor."""
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": params.config.to_dict(),
        "tensors": params.names(),
        "vocab": vocab.to_list() if vocab is not None else None,
    }
    arrays = {f"t{i}": params[name].detach().numpy().astype("<f8")
              for i, name in enumerate(params.names())}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path: str | Path) -> tuple[EncoderParameters, Vocabulary | None]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise DataError(f"unsupported checkpoint format {meta.get('format_version')}")
        config = EncoderConfig.from_dict(meta["config"]).validate()
        tensors = {name: torch.from_numpy(np.array(data[f"t{i}"], dtype=np.float64))
                   for i, name in enumerate(meta["tensors"])}
    expected = parameter_shapes(config)
    for name, shape in expected.items():
        if name not in tensors or tuple(tensors[name].shape) != shape:
            raise DataError(f"checkpoint tensor {name} missing or mis-shaped")
    vocab = Vocabulary.from_list(meta["vocab"]) if meta.get("vocab") else None
    return EncoderParameters(config, tensors), vocab
