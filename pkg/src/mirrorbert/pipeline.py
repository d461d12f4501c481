"""Stage orchestration for the experiment runner and the embedding exporter."""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from .augment import AugmentSpec
from .config import config_fingerprint
from .contrastive import LossConfig, TrainConfig, mirror_tune
from .corpus import (CorpusItem, Vocabulary, build_vocabulary, make_mirror_dataset,
                     read_corpus, tokenize, write_lines)
from .diagnostics import cosine_histogram, isotropy_score, mvn
from .encoder import (EncoderConfig, EncoderParameters, encode, init_parameters,
                      load_checkpoint, save_checkpoint)
from .evaluation import (eval_auc, eval_retrieval, eval_similarity, read_binary_tsv,
                         read_dictionary, read_similarity_tsv)
from .exceptions import DataError, MirrorBertError
from .pretraining import pretrain_mlm

log = logging.getLogger(__name__)

STAGE_ORDER = ["vocab", "pretrain", "tune", "eval", "diagnose", "export"]


def write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_jsonl(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def export_embeddings(params: EncoderParameters, vocab: Vocabulary, items: Sequence[CorpusItem],
                      path: str | Path, lowercase: bool = True) -> int:
    """Write ``n d`` then one ``surface v_1 ... v_d`` line per item; returns n.

    Spaces inside a surface become underscores. Values use 17 significant
    digits so a re-import is bit-exact.
    """
    if not items:
        raise DataError("no items to export")
    emb = encode(params, [tokenize(it.text, vocab, params.config.max_len, lowercase)
                          for it in items])
    try:
        fh = open(path, "w", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from None
    with fh:
        fh.write(f"{len(items)} {emb.shape[1]}\n")
        for it, vec in zip(items, emb):
            fh.write(it.text.replace(" ", "_") + " " + " ".join(f"{v:.17g}" for v in vec) + "\n")
    return len(items)


def read_embeddings(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        n, d = map(int, fh.readline().split())
        words, rows = [], []
        for line in fh:
            parts = line.rstrip("\n").split(" ")
            words.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    arr = np.asarray(rows, dtype=float)
    if arr.shape != (n, d):
        raise DataError(f"{path}: header says {n}x{d}, found {arr.shape}")
    return words, arr


class _Run:
    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.out = Path(cfg["output_dir"])
        self.lowercase = cfg["corpus"]["lowercase"]
        self.max_len = cfg["corpus"]["max_len"]
        self.artifacts: list[str] = []
        self.metrics: dict = {}
        self.vocab: Vocabulary | None = None
        self.base: EncoderParameters | None = None
        self.tuned: EncoderParameters | None = None
        if cfg.get("checkpoint"):
            self.base, self.vocab = load_checkpoint(cfg["checkpoint"])
            if self.vocab is None:
                raise DataError(f"checkpoint {cfg['checkpoint']} carries no vocabulary")
            self.max_len = self.base.config.max_len

    def emit(self, name: str) -> Path:
        path = self.out / name
        self.artifacts.append(str(path))
        return path

    def corpus(self) -> list[CorpusItem]:
        path = self.cfg["corpus"]["path"]
        if path is None:
            raise DataError("corpus.path is required for this stage")
        return read_corpus(path)

    def encoder_fn(self, params):
        vocab, max_len, lc = self.vocab, params.config.max_len, self.lowercase
        return lambda texts: encode(params, [tokenize(t, vocab, max_len, lc) for t in texts])

    def models(self):
        out = {}
        if self.base is not None:
            out["checkpoint" if self.cfg.get("checkpoint") else "base"] = self.base
        if self.tuned is not None:
            out["tuned"] = self.tuned
        if not out:
            raise DataError("no model available: run pretrain/tune or set checkpoint")
        return out

    def final_model(self):
        if self.tuned is not None:
            return self.tuned
        return next(iter(self.models().values()))

    # -- stages ----------------------------------------------------------------

    def vocab_stage(self):
        if self.cfg.get("checkpoint"):
            raise DataError("vocab stage conflicts with a fixed checkpoint")
        items = self.corpus()
        pre = self.cfg["corpus"]["pretrain_path"]
        if pre:
            items = items + read_corpus(pre)
        self.vocab = build_vocabulary(items, self.cfg["corpus"]["max_vocab"], self.lowercase)
        write_lines(self.emit("vocab.txt"), self.vocab.tokens)

    def pretrain_stage(self):
        if self.vocab is None:
            raise DataError("pretrain stage needs the vocab stage")
        e = self.cfg["encoder"]
        config = EncoderConfig(vocab_size=len(self.vocab), max_len=self.max_len, **e).validate()
        params = init_parameters(config, self.cfg["seed"])
        p = self.cfg["pretrain"]
        path = self.cfg["corpus"]["pretrain_path"] or self.cfg["corpus"]["path"]
        seqs = [tokenize(it.text, self.vocab, self.max_len, self.lowercase)
                for it in read_corpus(path)]
        records = []
        if p["epochs"] > 0:
            params, records = pretrain_mlm(params, seqs, epochs=p["epochs"],
                                           batch_size=p["batch_size"], lr=p["lr"],
                                           mask_rate=p["mask_rate"],
                                           weight_decay=p["weight_decay"], seed=self.cfg["seed"])
        write_jsonl(self.emit("pretrain_log.jsonl"), records)
        save_checkpoint(self.emit("base.npz"), params, self.vocab)
        self.base = params
        if records:
            self.metrics["pretrain_final_loss"] = records[-1]["loss"]

    def train_config(self) -> TrainConfig:
        t = self.cfg["train"]
        return TrainConfig(epochs=t["epochs"], pairs_per_batch=t["pairs_per_batch"],
                           seed=self.cfg["seed"], augment=AugmentSpec(**self.cfg["augment"]),
                           dropout_mode=t["dropout_mode"], loss=LossConfig(**self.cfg["loss"]),
                           lr=t["lr"], weight_decay=t["weight_decay"])

    def tune_stage(self):
        if self.base is None:
            raise DataError("tune stage needs a base model (pretrain stage or checkpoint)")
        e = self.cfg["encoder"]
        params = self.base.with_config(dropout_rate=e["dropout_rate"],
                                       drophead_rate=e["drophead_rate"], pooling=e["pooling"],
                                       mean_includes_pad=e["mean_includes_pad"])
        items = self.corpus()
        pairs = make_mirror_dataset(items, self.vocab, self.max_len, self.lowercase)
        vocab, max_len, lc = self.vocab, self.max_len, self.lowercase
        tuned, records = mirror_tune(params, pairs, self.train_config(),
                                     texts=[it.text for it in items],
                                     tokenizer=lambda s: tokenize(s, vocab, max_len, lc),
                                     log_path=self.emit("train_log.jsonl"))
        save_checkpoint(self.emit("tuned.npz"), tuned, self.vocab)
        self.tuned = tuned
        self.metrics["train_final_loss"] = records[-1]["loss"]

    def eval_stage(self):
        ev = self.cfg["eval"]
        report = {}
        sim = read_similarity_tsv(ev["similarity"]) if ev["similarity"] else None
        binary = read_binary_tsv(ev["binary"]) if ev["binary"] else None
        dictionary = read_dictionary(ev["dictionary"], ev["queries"]) if ev["dictionary"] else None
        if sim is None and binary is None and dictionary is None:
            raise DataError("eval stage needs eval.similarity, eval.binary or eval.dictionary")
        for name, params in self.models().items():
            enc = self.encoder_fn(params)
            metrics = {}
            if sim is not None:
                metrics.update(eval_similarity(enc, sim).metrics)
            if binary is not None:
                metrics.update(eval_auc(enc, binary).metrics)
            if dictionary is not None:
                metrics.update(eval_retrieval(enc, dictionary, ev["ks"], ev["scorer"],
                                              ev["csls_k"]).metrics)
            report[name] = metrics
            for k, v in metrics.items():
                self.metrics[f"{name}.{k}"] = v
        write_json(self.emit("eval_report.json"), report)

    def diagnose_stage(self):
        d = self.cfg["diagnostics"]
        texts = [it.text for it in (read_corpus(d["texts"]) if d["texts"] else self.corpus())]
        pairs = read_binary_tsv(d["pairs"]) if d["pairs"] else None
        report = {}
        for name, params in self.models().items():
            enc = self.encoder_fn(params)
            V = enc(texts)
            entry = {"is_score": isotropy_score(V), "mvn": mvn(V), "sample_size": len(texts)}
            if pairs:
                pos = [(a, b) for a, b, y in pairs if y == 1]
                neg = [(a, b) for a, b, y in pairs if y == 0]
                entry["histogram"] = cosine_histogram(pos, neg, enc, d["bins"]).to_dict()
            report[name] = entry
            self.metrics[f"{name}.is_score"] = entry["is_score"]
            self.metrics[f"{name}.mvn"] = entry["mvn"]
        write_json(self.emit("diagnostics.json"), report)

    def export_stage(self):
        items = self.corpus()
        n = export_embeddings(self.final_model(), self.vocab, items, self.emit("vectors.txt"),
                              self.lowercase)
        self.metrics["exported"] = n


def run_experiment(cfg: dict) -> dict:
    """Run the configured stages in pipeline order and write ``manifest.json``.

    A failing stage aborts the run; the manifest then records the stage and the
    error and the exception is re-raised.
    """
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"fingerprint": config_fingerprint(cfg), "seed": cfg["seed"],
                "stages": [s for s in STAGE_ORDER if s in cfg["stages"]],
                "status": "ok", "failed_stage": None, "error": None,
                "wall_times": {}, "artifacts": [], "metrics": {}}
    run = None
    stage = "setup"
    try:
        run = _Run(cfg)
        for stage in manifest["stages"]:
            t0 = time.perf_counter()
            log.info("stage %s", stage)
            getattr(run, f"{stage}_stage")()
            manifest["wall_times"][stage] = time.perf_counter() - t0
    except (MirrorBertError, OSError, ValueError) as exc:
        manifest.update(status="failed", failed_stage=stage, error=str(exc))
        raise
    finally:
        if run is not None:
            manifest["artifacts"] = run.artifacts
            manifest["metrics"] = run.metrics
        write_json(out / "manifest.json", manifest)
    return manifest
