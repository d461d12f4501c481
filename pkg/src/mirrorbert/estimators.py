"""scikit-learn style wrappers: fit on raw strings, transform to embeddings."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.utils.validation import check_is_fitted

from .augment import AugmentSpec
from .contrastive import LossConfig, TrainConfig, mirror_tune
from .corpus import CorpusItem, Vocabulary, build_vocabulary, make_mirror_dataset, tokenize
from .encoder import (EncoderConfig, EncoderParameters, encode, init_parameters,
                      load_checkpoint, save_checkpoint)
from .exceptions import DataError
from .pretraining import pretrain_mlm


def check_texts(X, name="X") -> list[str]:
    """Coerce a 1-d iterable of strings (list, array, Series) to a list."""
    if isinstance(X, str):
        raise ValueError(f"{name} must be an iterable of strings, not a single string")
    arr = np.asarray(list(X), dtype=object)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    bad = [i for i, x in enumerate(arr) if not isinstance(x, str)]
    if bad:
        raise ValueError(f"{name}[{bad[0]}] is not a string")
    return [str(x) for x in arr]


def _items(texts):
    return [CorpusItem(i, t) for i, t in enumerate(texts) if t.strip()]


class _EmbeddingTransformer(TransformerMixin, BaseEstimator):

    def _tokens(self, texts):
        return [tokenize(t, self.vocab_, self.params_.config.max_len, self.lowercase)
                for t in texts]

    def transform(self, X):
        """Pooled embeddings with dropout disabled, shape ``(n_samples, hidden_dim)``."""
        check_is_fitted(self, "params_")
        return encode(self.params_, self._tokens(check_texts(X)))

    def encode_fn(self):
        """A plain callable ``texts -> embeddings`` for the evaluation helpers."""
        check_is_fitted(self, "params_")
        return self.transform

    def save(self, path: str | Path) -> None:
        check_is_fitted(self, "params_")
        save_checkpoint(path, self.params_, self.vocab_)

    def _set_fitted(self, params: EncoderParameters, vocab: Vocabulary):
        self.params_ = params
        self.vocab_ = vocab
        self.n_features_out_ = params.config.hidden_dim
        return self


class MLMEncoder(_EmbeddingTransformer):
    """Toy transformer trained with masked language modelling.

    ``fit`` builds a whitespace vocabulary from ``X`` and pretrains the encoder;
    ``transform`` returns pooled embeddings.
    """

    def __init__(self, max_vocab=5000, num_layers=2, hidden_dim=64, num_heads=2, ff_dim=128,
                 max_len=32, dropout_rate=0.1, drophead_rate=0.0, pooling="cls",
                 mean_includes_pad=False, epochs=10, batch_size=64, lr=1e-3, mask_rate=0.15,
                 weight_decay=0.01, lowercase=True, random_state=0):
        self.max_vocab = max_vocab
        self.num_layers = num_layers
        self.hidden_dim = hidden_dim
        self.num_heads = num_heads
        self.ff_dim = ff_dim
        self.max_len = max_len
        self.dropout_rate = dropout_rate
        self.drophead_rate = drophead_rate
        self.pooling = pooling
        self.mean_includes_pad = mean_includes_pad
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.mask_rate = mask_rate
        self.weight_decay = weight_decay
        self.lowercase = lowercase
        self.random_state = random_state

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(vocab_size=vocab_size, num_layers=self.num_layers,
                             hidden_dim=self.hidden_dim, num_heads=self.num_heads,
                             ff_dim=self.ff_dim, dropout_rate=self.dropout_rate,
                             drophead_rate=self.drophead_rate, max_len=self.max_len,
                             pooling=self.pooling,
                             mean_includes_pad=self.mean_includes_pad).validate()

    def fit(self, X, y=None):
        texts = check_texts(X)
        items = _items(texts)
        vocab = build_vocabulary(items, self.max_vocab, self.lowercase)
        params = init_parameters(self.encoder_config(len(vocab)), self.random_state)
        self.vocab_ = vocab
        if self.epochs > 0:
            params, self.log_ = pretrain_mlm(
                params, self._tokens_with(vocab, params, texts), epochs=self.epochs,
                batch_size=self.batch_size, lr=self.lr, mask_rate=self.mask_rate,
                weight_decay=self.weight_decay, seed=self.random_state)
        else:
            self.log_ = []
        return self._set_fitted(params, vocab)

    def _tokens_with(self, vocab, params, texts):
        return [tokenize(t, vocab, params.config.max_len, self.lowercase) for t in texts]

    @classmethod
    def from_checkpoint(cls, path: str | Path, lowercase: bool = True) -> "MLMEncoder":
        params, vocab = load_checkpoint(path)
        if vocab is None:
            raise DataError(f"checkpoint {path} carries no vocabulary")
        c = params.config
        est = cls(max_vocab=len(vocab), num_layers=c.num_layers, hidden_dim=c.hidden_dim,
                  num_heads=c.num_heads, ff_dim=c.ff_dim, max_len=c.max_len,
                  dropout_rate=c.dropout_rate, drophead_rate=c.drophead_rate,
                  pooling=c.pooling.value, mean_includes_pad=c.mean_includes_pad,
                  lowercase=lowercase)
        est.log_ = []
        return est._set_fitted(params, vocab)


class MirrorTuner(_EmbeddingTransformer):
    """Contrastive self-duplication fine-tuning on top of a fitted ``MLMEncoder``.

    ``fit(X)`` treats every string in ``X`` as its own class (duplicates are
    rejected), pairs it with itself, and tunes a copy of the base encoder's
    weights. An unfitted ``base_encoder`` is cloned and fitted on ``X`` first.
    """

    def __init__(self, base_encoder=None, epochs=2, pairs_per_batch=200, temperature=0.04,
                 symmetric_anchors=False, objective="infonce", augment="none", augment_param=0,
                 dropout_mode="independent", dropout_rate=None, drophead_rate=None,
                 pooling=None, lr=2e-5, weight_decay=0.01, random_state=0):
        self.base_encoder = base_encoder
        self.epochs = epochs
        self.pairs_per_batch = pairs_per_batch
        self.temperature = temperature
        self.symmetric_anchors = symmetric_anchors
        self.objective = objective
        self.augment = augment
        self.augment_param = augment_param
        self.dropout_mode = dropout_mode
        self.dropout_rate = dropout_rate
        self.drophead_rate = drophead_rate
        self.pooling = pooling
        self.lr = lr
        self.weight_decay = weight_decay
        self.random_state = random_state

    @property
    def lowercase(self):
        return getattr(self.base_encoder, "lowercase", True)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, pairs_per_batch=self.pairs_per_batch, seed=self.random_state,
            augment=AugmentSpec(self.augment, self.augment_param, self.random_state),
            dropout_mode=self.dropout_mode,
            loss=LossConfig(objective=self.objective, temperature=self.temperature,
                            symmetric_anchors=self.symmetric_anchors),
            lr=self.lr, weight_decay=self.weight_decay)

    def fit(self, X, y=None):
        texts = check_texts(X)
        base = self.base_encoder if self.base_encoder is not None else MLMEncoder()
        try:
            check_is_fitted(base, "params_")
        except Exception:
            base = clone(base).fit(texts)
        self.base_encoder_ = base
        changes = {k: v for k, v in (("dropout_rate", self.dropout_rate),
                                     ("drophead_rate", self.drophead_rate),
                                     ("pooling", self.pooling)) if v is not None}
        params = base.params_.with_config(**changes) if changes else base.params_
        vocab = base.vocab_
        items = _items(texts)
        max_len = params.config.max_len
        pairs = make_mirror_dataset(items, vocab, max_len, self.lowercase)
        tuned, self.log_ = mirror_tune(
            params, pairs, self.train_config(), texts=[it.text for it in items],
            tokenizer=lambda t: tokenize(t, vocab, max_len, self.lowercase))
        return self._set_fitted(tuned, vocab)
