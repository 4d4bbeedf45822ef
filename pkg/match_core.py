#!/usr/bin/env python3
"""
match_core.py - command-line entry point.

    prepare    build vocabulary, embedding table and split files
    train      train a model and write the best-dev checkpoint
    eval       accuracy and confusion matrix on a labeled file
    infer      label and probabilities for one pair
    inspect    write the alignment/gate trace of one pair
    checkgrad  finite-difference check of a small random model
    stats      input/forget gate statistics over a corpus
    null-align hypothesis tokens aligned with NULL

Hyperparameter defaults come from config/config.json (CONFIG_DIR).
"""

import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional, Tuple

import numpy as np

from CheckpointStore import Checkpoint, load_checkpoint, save_checkpoint
from Embeddings import EmbeddingTable, Vocabulary, build_vocab, impute_oov, load_pretrained
from Introspect import StopwordList, export_trace, gate_statistics, null_alignment_report
from MatchErrors import CheckpointError, MatchLstmError
from Matcher import CLASS_ORDER, MODEL_VARIANTS, MatchModel, ModelConfig, count_parameters, forward_pair
from Settings import load_config, log_dir, resource_path
from SnliData import Corpus, LabeledPair, load_fixture_tsv, parse_snli, split_statistics, write_fixture_tsv
from Training import TrainConfig, Trainer, evaluate, model_gradient_check

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
VOCAB_FILE = "vocab.txt"
OOV_FILE = "oov.txt"
TABLE_FILE = "embeddings.npy"
STATS_FILE = "stats.json"
SPLITS = ("train", "dev", "test")


def setup_logging(log_file: str, verbose: bool = False):
    directory = log_dir()
    os.makedirs(directory, exist_ok=True)
    logging.basicConfig(
        filename=os.path.join(directory, log_file),
        level=logging.INFO,
        format=LOG_FORMAT,
        filemode='a'
    )
    if verbose:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logging.getLogger().addHandler(handler)


# --- Shared loading helpers ---

def load_corpus(path: str, split: Optional[str] = None) -> Corpus:
    if path.endswith(".tsv"):
        return load_fixture_tsv(path, split)
    return parse_snli(path, split)


def load_prepared(directory: str) -> Tuple[Vocabulary, EmbeddingTable]:
    vocab = Vocabulary.load(os.path.join(directory, VOCAB_FILE), os.path.join(directory, OOV_FILE))
    table = EmbeddingTable.load(os.path.join(directory, TABLE_FILE))
    if len(table) != len(vocab):
        raise CheckpointError(f"{directory}: table has {len(table)} rows for {len(vocab)} vocabulary ids")
    return vocab, table


def load_model(checkpoint_path: str, prepared: Optional[str]) -> Tuple[MatchModel, Vocabulary, EmbeddingTable]:
    checkpoint = load_checkpoint(checkpoint_path)
    directory = prepared or checkpoint.metadata.get("prepared_dir")
    if not directory:
        raise CheckpointError(f"{checkpoint_path}: no prepared directory recorded, pass --prepared")
    vocab, table = load_prepared(directory)
    expected = checkpoint.metadata.get("embedding_checksum")
    if expected and expected != table.checksum():
        raise CheckpointError(f"embedding table in {directory} does not match the one used for training")
    return checkpoint.to_model(), vocab, table


def emit_records(records: List[Dict], out_path: Optional[str]):
    lines = "".join(json.dumps(r) + "\n" for r in records)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as f:
            f.write(lines)
        print(f"Wrote {len(records)} records to {out_path}")
    else:
        sys.stdout.write(lines)


# --- Commands ---

def cmd_prepare(args, config: Dict) -> int:
    corpora = {}
    for split in SPLITS:
        path = getattr(args, split)
        if path:
            corpora[split] = load_corpus(path, split)
    all_pairs = [pair for corpus in corpora.values() for pair in corpus]
    vocab = build_vocab(all_pairs)
    table = load_pretrained(args.embeddings, vocab, args.dim)
    table = impute_oov(table, vocab, all_pairs, window=args.window)

    os.makedirs(args.out, exist_ok=True)
    vocab.save(os.path.join(args.out, VOCAB_FILE), os.path.join(args.out, OOV_FILE))
    table.save(os.path.join(args.out, TABLE_FILE))
    for split, corpus in corpora.items():
        write_fixture_tsv(corpus, os.path.join(args.out, f"{split}.tsv"))

    stats = {
        "splits": {split: split_statistics(corpus) for split, corpus in corpora.items()},
        "vocab_size": len(vocab),
        "oov_count": len(vocab.oov_set),
        "dim": args.dim,
        "window": args.window,
        "embedding_checksum": table.checksum(),
    }
    with open(os.path.join(args.out, STATS_FILE), "w", encoding="utf-8") as f:
        json.dump(stats, f, indent=2)

    for split, s in stats["splits"].items():
        print(f"{split}: {s['kept']} kept / {s['dropped']} dropped")
    print(f"vocabulary: {len(vocab)} ids, {len(vocab.oov_set)} OOV")
    return 0


def cmd_train(args, config: Dict) -> int:
    train_cfg = TrainConfig.from_settings(
        config["training"], epochs=args.epochs, variant=args.variant, d=args.d, seed=args.seed,
        batch_size=args.batch_size, lr=args.lr, decay=args.decay, workers=args.workers,
        clip_norm=args.clip_norm, beta1=args.beta1, beta2=args.beta2, adam_epsilon=args.adam_epsilon,
        shuffle=args.shuffle, shared_encoder=args.shared_encoder)
    vocab, table = load_prepared(args.data)
    train_corpus = load_fixture_tsv(os.path.join(args.data, "train.tsv"), "train")
    dev_path = os.path.join(args.data, "dev.tsv")
    dev_corpus = load_fixture_tsv(dev_path, "dev") if os.path.exists(dev_path) and not args.no_dev else None

    model = MatchModel(ModelConfig(variant=train_cfg.variant, d=train_cfg.d, l=table.dim,
                                   shared_encoder=train_cfg.shared_encoder, seed=train_cfg.seed))
    log_path = args.log or os.path.splitext(args.out)[0] + ".train.jsonl"
    trainer = Trainer(model, table, vocab, train_cfg, log_path=log_path)
    result = trainer.train(train_corpus, dev_corpus)

    checkpoint = Checkpoint.from_model(model, embedding_checksum=table.checksum(),
                                       prepared_dir=os.path.abspath(args.data),
                                       best_epoch=result.best_epoch)
    save_checkpoint(checkpoint, args.out)
    last = result.records[-1]
    print(f"trained {train_cfg.variant} d={train_cfg.d}: {count_parameters(model)} parameters, "
          f"{len(result.records)} epochs, final train_acc={last.train_acc:.4f}, "
          f"best dev_acc={result.best_dev_acc} (epoch {result.best_epoch})")
    print(f"checkpoint: {args.out}")
    print(f"training log: {log_path}")
    return 0


def cmd_eval(args, config: Dict) -> int:
    model, vocab, table = load_model(args.checkpoint, args.prepared)
    corpus = load_corpus(args.data)
    report = evaluate(model, table, vocab, corpus, workers=args.workers, unknown_to_null=True)
    print(f"accuracy: {report.accuracy:.4f} ({report.confusion.correct}/{report.confusion.total})")
    print(report.confusion.format_table())
    return 0


def _pair_from_args(args) -> LabeledPair:
    return LabeledPair.from_text(args.premise, args.hypothesis, args.label)


def cmd_infer(args, config: Dict) -> int:
    model, vocab, table = load_model(args.checkpoint, args.prepared)
    probs, _ = forward_pair(model, _pair_from_args(args), vocab, table, unknown_to_null=True)
    print(CLASS_ORDER[int(np.argmax(probs.data))])
    for label, p in zip(CLASS_ORDER, probs.data):
        print(f"{label}\t{p:.6f}")
    return 0


def cmd_inspect(args, config: Dict) -> int:
    model, vocab, table = load_model(args.checkpoint, args.prepared)
    trace = export_trace(_pair_from_args(args), model, vocab, table, args.out)
    print(f"wrote {trace.length} x {trace.alpha.shape[1]} alignment trace to {args.out}")
    return 0


def cmd_checkgrad(args, config: Dict) -> int:
    section = config["checkgrad"]
    report = model_gradient_check(args.variant, args.d, l=args.l or section["l"],
                                  premise_len=section["premise_len"], hypothesis_len=section["hypothesis_len"],
                                  seed=args.seed, epsilon=section["epsilon"])
    for name, error in report.errors.items():
        print(f"{name:<20} {error:.3e}")
    tolerance = section["tolerance"]
    print(f"max relative error {report.max_error:.3e} ({report.worst()}), tolerance {tolerance:g}")
    if not report.passed(tolerance):
        logger.error(f"Gradient check failed for {args.variant}: {report.worst()} {report.max_error:.3e}")
        return 1
    return 0


def cmd_stats(args, config: Dict) -> int:
    model, vocab, table = load_model(args.checkpoint, args.prepared)
    stopwords = StopwordList.load(args.stopwords or resource_path(config["introspect"]["stopwords_file"]))
    tokens = args.tokens if args.tokens is not None else config["introspect"]["tokens"]
    stats, warnings = gate_statistics(load_corpus(args.data), model, vocab, table, stopwords, tokens)
    emit_records([s.to_record() for s in stats] + warnings, args.out)
    return 0


def cmd_null_align(args, config: Dict) -> int:
    model, vocab, table = load_model(args.checkpoint, args.prepared)
    threshold = args.threshold if args.threshold is not None else config["introspect"]["null_threshold"]
    report = null_alignment_report(load_corpus(args.data), model, vocab, table, threshold)
    emit_records(report, args.out)
    return 0


def build_parser(config: Dict) -> argparse.ArgumentParser:
    training = config["training"]
    parser = argparse.ArgumentParser(description="match-LSTM natural language inference engine")
    parser.add_argument("--verbose", action="store_true", help="Also log to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="Build vocabulary, embeddings and split files")
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--test")
    p.add_argument("--embeddings", required=True, help="GloVe-format text file")
    p.add_argument("--dim", type=int, default=config["embeddings"]["dim"])
    p.add_argument("--window", type=int, default=config["embeddings"]["window"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="Train a model")
    p.add_argument("--data", required=True, help="Directory written by prepare")
    p.add_argument("--variant", choices=MODEL_VARIANTS, default=training["variant"])
    p.add_argument("--d", type=int, default=training["d"])
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--seed", type=int, default=training["seed"])
    p.add_argument("--batch-size", type=int, default=training["batch_size"])
    p.add_argument("--lr", type=float, default=training["lr"])
    p.add_argument("--decay", type=float, default=training["decay"])
    p.add_argument("--workers", type=int, default=training["workers"])
    p.add_argument("--clip-norm", type=float, default=training["clip_norm"])
    p.add_argument("--beta1", type=float, default=training["beta1"])
    p.add_argument("--beta2", type=float, default=training["beta2"])
    p.add_argument("--adam-epsilon", type=float, default=training["adam_epsilon"])
    p.add_argument("--no-shuffle", dest="shuffle", action="store_false", help="Keep corpus order within each epoch")
    encoders = p.add_mutually_exclusive_group()
    encoders.add_argument("--shared-encoder", dest="shared_encoder", action="store_true",
                          help="One LSTM encodes premise and hypothesis")
    encoders.add_argument("--separate-encoders", dest="shared_encoder", action="store_false",
                          help="Independent premise and hypothesis LSTMs")
    p.set_defaults(shuffle=training["shuffle"], shared_encoder=training["shared_encoder"])
    p.add_argument("--no-dev", action="store_true", help="Ignore dev.tsv")
    p.add_argument("--log", help="Training log (default: <out>.train.jsonl)")
    p.add_argument("--out", required=True, help="Checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Accuracy and confusion matrix")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="SNLI .jsonl or fixture .tsv")
    p.add_argument("--prepared")
    p.add_argument("--workers", type=int, default=training["workers"])
    p.set_defaults(func=cmd_eval)

    for name, func, helptext in (("infer", cmd_infer, "Classify one pair"),
                                 ("inspect", cmd_inspect, "Export the trace of one pair")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--premise", required=True)
        p.add_argument("--hypothesis", required=True)
        p.add_argument("--label", choices=CLASS_ORDER, default="neutral",
                       help="Gold label recorded with the pair")
        p.add_argument("--prepared")
        if name == "inspect":
            p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("checkgrad", help="Finite-difference gradient check")
    p.add_argument("--variant", choices=MODEL_VARIANTS, default=training["variant"])
    p.add_argument("--d", type=int, default=6)
    p.add_argument("--l", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_checkgrad)

    p = sub.add_parser("stats", help="Gate statistics over a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--prepared")
    p.add_argument("--stopwords")
    p.add_argument("--tokens", nargs="*")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("null-align", help="Tokens aligned with NULL")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--prepared")
    p.add_argument("--threshold", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_null_align)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    config = load_config()
    args = build_parser(config).parse_args(argv)
    setup_logging(config["logging"]["log_file"], args.verbose)
    logger.info(f"Command {args.command} started")
    try:
        status = args.func(args, config)
    except (MatchLstmError, OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1
    logger.info(f"Command {args.command} finished with status {status}")
    return status


if __name__ == "__main__":
    sys.exit(main())
