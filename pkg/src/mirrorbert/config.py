"""Experiment configuration: JSON file with a schema version, defaults and overrides."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema

from .exceptions import DataError

SCHEMA_VERSION = 1

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "output_dir": "run",
    "stages": ["vocab", "pretrain", "tune", "eval", "diagnose"],
    "checkpoint": None,
    "corpus": {
        "path": None,
        "pretrain_path": None,
        "max_vocab": 5000,
        "max_len": 32,
        "lowercase": True,
    },
    "encoder": {
        "num_layers": 2,
        "hidden_dim": 64,
        "num_heads": 2,
        "ff_dim": 128,
        "dropout_rate": 0.1,
        "drophead_rate": 0.0,
        "pooling": "cls",
        "mean_includes_pad": False,
        "tie_mlm_weights": True,
    },
    "pretrain": {
        "epochs": 15,
        "batch_size": 64,
        "lr": 3e-3,
        "mask_rate": 0.15,
        "weight_decay": 0.01,
    },
    "augment": {"kind": "none", "param": 0, "seed": 0},
    "train": {
        "epochs": 2,
        "pairs_per_batch": 200,
        "dropout_mode": "independent",
        "lr": 2e-5,
        "weight_decay": 0.01,
    },
    "loss": {
        "objective": "infonce",
        "temperature": 0.04,
        "symmetric_anchors": False,
        "ms_alpha": 2.0,
        "ms_beta": 50.0,
        "ms_lambda": 0.5,
        "mining_enabled": True,
        "mining_margin": 0.1,
    },
    "eval": {
        "similarity": None,
        "binary": None,
        "dictionary": None,
        "queries": None,
        "ks": [1, 5],
        "scorer": "cosine",
        "csls_k": 10,
    },
    "diagnostics": {
        "texts": None,
        "pairs": None,
        "bins": 20,
    },
}

_num = {"type": "number"}
_int = {"type": "integer"}
_path = {"type": ["string", "null"]}
_bool = {"type": "boolean"}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "seed"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": _int,
        "output_dir": {"type": "string"},
        "stages": {"type": "array", "items": {
            "enum": ["vocab", "pretrain", "tune", "eval", "diagnose", "export"]}},
        "checkpoint": _path,
        "corpus": {"type": "object", "additionalProperties": False, "properties": {
            "path": _path, "pretrain_path": _path, "max_vocab": {"type": "integer", "minimum": 5},
            "max_len": {"type": "integer", "minimum": 2}, "lowercase": _bool}},
        "encoder": {"type": "object", "additionalProperties": False, "properties": {
            "num_layers": {"type": "integer", "minimum": 1}, "hidden_dim": {"type": "integer", "minimum": 1},
            "num_heads": {"type": "integer", "minimum": 1}, "ff_dim": {"type": "integer", "minimum": 1},
            "dropout_rate": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "drophead_rate": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "pooling": {"enum": ["cls", "mean"]}, "mean_includes_pad": _bool,
            "tie_mlm_weights": _bool}},
        "pretrain": {"type": "object", "additionalProperties": False, "properties": {
            "epochs": {"type": "integer", "minimum": 0}, "batch_size": {"type": "integer", "minimum": 1},
            "lr": _num, "mask_rate": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "weight_decay": _num}},
        "augment": {"type": "object", "additionalProperties": False, "properties": {
            "kind": {"enum": ["none", "span_mask", "word_mask", "char_erase", "punct_insert",
                              "rand_char_insert"]},
            "param": {"type": "number", "minimum": 0}, "seed": _int}},
        "train": {"type": "object", "additionalProperties": False, "properties": {
            "epochs": {"type": "integer", "minimum": 1},
            "pairs_per_batch": {"type": "integer", "minimum": 2},
            "dropout_mode": {"enum": ["independent", "controlled", "disabled"]},
            "lr": _num, "weight_decay": _num}},
        "loss": {"type": "object", "additionalProperties": False, "properties": {
            "objective": {"enum": ["infonce", "ms_loss"]},
            "temperature": {"type": "number", "exclusiveMinimum": 0},
            "symmetric_anchors": _bool,
            "ms_alpha": {"type": "number", "exclusiveMinimum": 0},
            "ms_beta": {"type": "number", "exclusiveMinimum": 0},
            "ms_lambda": _num, "mining_enabled": _bool, "mining_margin": _num}},
        "eval": {"type": "object", "additionalProperties": False, "properties": {
            "similarity": _path, "binary": _path, "dictionary": _path, "queries": _path,
            "ks": {"type": "array", "items": {"type": "integer", "minimum": 1}},
            "scorer": {"enum": ["cosine", "csls"]}, "csls_k": {"type": "integer", "minimum": 1}}},
        "diagnostics": {"type": "object", "additionalProperties": False, "properties": {
            "texts": _path, "pairs": _path, "bins": {"type": "integer", "minimum": 2}}},
    },
}

PATH_KEYS = [("checkpoint",), ("corpus", "path"), ("corpus", "pretrain_path"),
             ("eval", "similarity"), ("eval", "binary"), ("eval", "dictionary"),
             ("eval", "queries"), ("diagnostics", "texts"), ("diagnostics", "pairs")]


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_path(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def get_path(cfg: dict, keys) -> object:
    node = cfg
    for k in keys:
        if not isinstance(node, dict):
            return None
        node = node.get(k)
    return node


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Read a JSON config (optional), fill defaults, apply dotted-key overrides, validate.

    Relative paths in the file (and the default ``output_dir``) are resolved
    against the config file's directory; override values are taken as given.
    """
    raw = {}
    base_dir = Path.cwd()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: invalid JSON: {exc}") from None
        base_dir = Path(path).resolve().parent
        for keys in PATH_KEYS:
            val = get_path(raw, keys)
            if isinstance(val, str) and not Path(val).is_absolute():
                set_path(raw, ".".join(keys), str(base_dir / val))
    if "seed" not in raw and "seed" not in (overrides or {}):
        raise DataError(f"{path or 'config'}: 'seed' must be set explicitly")
    cfg = merge(DEFAULTS, raw)
    if not Path(cfg["output_dir"]).is_absolute():
        cfg["output_dir"] = str(base_dir / cfg["output_dir"])
    for dotted, value in (overrides or {}).items():
        set_path(cfg, dotted, value)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise DataError(f"invalid config at {where}: {exc.message}") from None
    for keys in PATH_KEYS:
        val = get_path(cfg, keys)
        if val is not None and not Path(val).exists():
            raise DataError(f"config {'.'.join(keys)}: file {val} does not exist")


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def config_fingerprint(cfg: dict) -> str:
    """Content hash of the semantic config.

    Input files enter by the sha256 of their bytes rather than their location,
    so moving a dataset does not change the fingerprint but editing it does.
    ``output_dir`` is excluded.
    """
    semantic = copy.deepcopy({k: v for k, v in cfg.items() if k != "output_dir"})
    for keys in PATH_KEYS:
        val = get_path(cfg, keys)
        if val is not None:
            set_path(semantic, ".".join(keys), "sha256:" + _file_digest(val))
    payload = json.dumps(semantic, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()
