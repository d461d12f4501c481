"""Command line entry point: ``mirrorbert <subcommand> [--config FILE] [flags]``.

Every flag maps onto a config key and overrides the value read from the file.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import load_config, parse_value
from .exceptions import DataError, MirrorBertError, NumericalError
from .pipeline import run_experiment


class UsageError(MirrorBertError):
    exit_code = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# subcommand -> (stages, help)
COMMANDS = {
    "vocab": (["vocab"], "build the vocabulary from the corpus"),
    "pretrain": (["vocab", "pretrain"], "build the vocabulary and MLM-pretrain a base encoder"),
    "tune": (None, "mirror-tune a base checkpoint (or pretrain one first) on the corpus"),
    "eval-sim": (["eval"], "Spearman/Pearson on a text_a<TAB>text_b<TAB>score file"),
    "eval-retrieval": (["eval"], "accuracy@k of mentions against a surface->concept dictionary"),
    "eval-auc": (["eval"], "ROC-AUC of cosine scores on a 0/1-labelled pair file"),
    "diagnose": (["diagnose"], "isotropy score, MVN and cosine histograms"),
    "export": (["export"], "write embeddings in the word-vector text format"),
    "run": (None, "run the stages listed in the config (full pipeline by default)"),
}

# flag -> (config key, type)
FLAGS = {
    "--seed": ("seed", int),
    "--output-dir": ("output_dir", str),
    "--checkpoint": ("checkpoint", str),
    "--corpus": ("corpus.path", str),
    "--pretrain-corpus": ("corpus.pretrain_path", str),
    "--max-vocab": ("corpus.max_vocab", int),
    "--max-len": ("corpus.max_len", int),
    "--pooling": ("encoder.pooling", str),
    "--dropout-rate": ("encoder.dropout_rate", float),
    "--drophead-rate": ("encoder.drophead_rate", float),
    "--pretrain-epochs": ("pretrain.epochs", int),
    "--augment": ("augment.kind", str),
    "--augment-param": ("augment.param", float),
    "--epochs": ("train.epochs", int),
    "--batch-pairs": ("train.pairs_per_batch", int),
    "--dropout-mode": ("train.dropout_mode", str),
    "--lr": ("train.lr", float),
    "--objective": ("loss.objective", str),
    "--temperature": ("loss.temperature", float),
    "--scorer": ("eval.scorer", str),
    "--csls-k": ("eval.csls_k", int),
    "--dictionary": ("eval.dictionary", str),
    "--queries": ("eval.queries", str),
    "--texts": ("diagnostics.texts", str),
    "--pairs": ("diagnostics.pairs", str),
    "--bins": ("diagnostics.bins", int),
}

# "--data" means a different eval file per subcommand
DATA_KEYS = {"eval-sim": "eval.similarity", "eval-auc": "eval.binary"}
# the single-task eval subcommands ignore the other eval inputs
EVAL_INPUTS = {"eval-sim": ["similarity"], "eval-auc": ["binary"],
               "eval-retrieval": ["dictionary", "queries"]}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mirrorbert", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON experiment config")
        for flag, (key, typ) in FLAGS.items():
            p.add_argument(flag, dest=key, type=typ, default=None, help=f"overrides {key}")
        if name in DATA_KEYS:
            p.add_argument("--data", dest=DATA_KEYS[name], default=None,
                           help=f"overrides {DATA_KEYS[name]}")
        if name == "eval-retrieval":
            p.add_argument("--k", dest="eval.ks", type=int, nargs="+", default=None)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key, value parsed as JSON when possible")
    return parser


def overrides_from_args(args) -> dict:
    out = {}
    for key, value in vars(args).items():
        if "." in key or key in ("seed", "output_dir", "checkpoint"):
            if value is not None:
                out[key] = value
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k] = parse_value(v)
    return out


def stages_for(command: str, cfg: dict) -> list[str]:
    if command in EVAL_INPUTS:
        for key in ("similarity", "binary", "dictionary", "queries"):
            if key not in EVAL_INPUTS[command]:
                cfg["eval"][key] = None
    stages = COMMANDS[command][0]
    if stages is not None:
        return stages
    if command == "tune":
        return ["tune"] if cfg.get("checkpoint") else ["vocab", "pretrain", "tune"]
    return cfg["stages"]


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = overrides_from_args(args)
        cfg = load_config(args.config, overrides)
        cfg["stages"] = stages_for(args.command, cfg)
        manifest = run_experiment(cfg)
    except UsageError as exc:
        print(f"mirrorbert: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"mirrorbert: numerical error: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError, ValueError) as exc:
        print(f"mirrorbert: data error: {exc}", file=sys.stderr)
        return 2
    json.dump({"status": manifest["status"], "metrics": manifest["metrics"],
               "artifacts": manifest["artifacts"]}, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
