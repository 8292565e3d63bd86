"""Command-line entry point: ``tweetvec {train,eval,gen-synthetic,report-attention,export}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .corpus import CorpusError, TokenizerConfig, ingest, read_labels
from .evaluation import (
    PENALTY_GRID,
    SyntheticSpec,
    evaluate,
    generate_synthetic,
    instances_from_labels,
    split_by_user,
)
from .params import CheckpointError, export_embeddings, load_checkpoint, read_word_vectors, save_checkpoint
from .trainer import CONTEXT_SIZE_GRID, AttentionReport, NumericalError, TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

CHECKPOINT = "checkpoint.tle"
CONFIG = "config.json"
IDS = "ids.json"
LOSS_CSV = "loss_curve.csv"
ATTENTION_CSV = "attention.csv"
ATTENTION_FULL_CSV = "attention_full.csv"
RESULTS = "results.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tweetvec", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train embeddings on a timeline corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dim", type=int, default=200)
    p.add_argument("--cw", type=int, default=10, help="word context window")
    p.add_argument("--ct", type=int, default=2, choices=CONTEXT_SIZE_GRID, help="temporal context size")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--use-user", type=int, choices=(0, 1), default=0)
    p.add_argument("--attention", choices=("learned", "uniform", "sd"), default="learned")
    p.add_argument("--pretrained-words")
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--deterministic", action="store_true",
                   help="single writer, bitwise reproducible (implied when --workers is 1)")
    p.add_argument("--out", default="run")

    p = sub.add_parser("eval", help="entity classification with a tuned linear classifier")
    p.add_argument("--corpus", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", default="run", help="directory written by train")
    p.add_argument("--seed", type=int, default=0, help="seed for the user-level split")

    p = sub.add_parser("gen-synthetic", help="write a synthetic corpus and label file")
    p.add_argument("--out", default="synthetic")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--users", type=int, default=20)
    p.add_argument("--tweets-per-user", type=int, default=50)
    p.add_argument("--topics", type=int, default=2)
    p.add_argument("--words-per-topic", type=int, default=20)
    p.add_argument("--block-length", type=int, default=5)
    p.add_argument("--topic-words", type=int, default=8)
    p.add_argument("--filler-words", type=int, default=0)
    p.add_argument("--filler-vocab", type=int, default=0)
    p.add_argument("--relevance", choices=("block", "adjacent"), default="block")

    p = sub.add_parser("report-attention", help="print mean attention per epoch and offset")
    p.add_argument("--out", default="run", help="directory written by train")
    p.add_argument("--full-context", action="store_true",
                   help="only samples whose whole context window exists")

    p = sub.add_parser("export", help="write word, tweet or user vectors as text")
    p.add_argument("--out", default="run", help="directory written by train")
    p.add_argument("--which", choices=("words", "tweets", "users"), required=True)
    p.add_argument("--dest", help="output file (default: <out>/<which>.txt)")
    return parser


def _echo(config: dict) -> None:
    print(json.dumps(config, sort_keys=True))


def cmd_train(args) -> int:
    corpus = ingest(args.corpus, TokenizerConfig(), args.min_count)
    config = TrainConfig(
        dim=args.dim,
        word_window=args.cw,
        context_size=args.ct,
        epochs=args.epochs,
        lr=args.lr,
        use_user=bool(args.use_user),
        attention_mode=args.attention,
        seed=args.seed,
        deterministic=args.deterministic or args.workers == 1,
        workers=args.workers,
    )
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    resolved = {**config.to_dict(), "corpus": args.corpus, "min_count": args.min_count,
                "pretrained_words": args.pretrained_words, "config_hash": config.hash()}
    _echo(resolved)
    pretrained = read_word_vectors(args.pretrained_words) if args.pretrained_words else None
    result = train(corpus, config, pretrained=pretrained)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.store, result.adam, out / CHECKPOINT, config.hash())
    result.loss_curve.to_csv(out / LOSS_CSV)
    result.attention.to_csv(out / ATTENTION_CSV)
    result.attention.to_csv(out / ATTENTION_FULL_CSV, full_context=True)
    (out / CONFIG).write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    ids = {"words": corpus.vocab.index_to_word, "tweets": corpus.tweet_ids, "users": corpus.user_ids}
    (out / IDS).write_text(json.dumps(ids))
    return EXIT_OK


def cmd_eval(args) -> int:
    out = Path(args.out)
    resolved = json.loads((out / CONFIG).read_text())
    _echo({**resolved, "labels": args.labels, "split_seed": args.seed})
    corpus = ingest(args.corpus, TokenizerConfig(), resolved.get("min_count", 1))
    store, _ = load_checkpoint(out / CHECKPOINT, resolved["config_hash"])
    if store.tweet_vectors.shape[0] != corpus.n_tweets:
        raise CorpusError("corpus does not match the trained checkpoint")
    instances = instances_from_labels(read_labels(args.labels))
    for inst in instances:
        missing = [t for t in inst.tweet_ids if t not in corpus.tweet_index]
        if missing:
            raise CorpusError(f"entity {inst.entity_id!r} references unknown tweet {missing[0]!r}")
    split_by_user(instances, corpus, seed=args.seed)
    res = evaluate(instances, corpus, store.tweet_vectors, PENALTY_GRID)
    results = {"penalty": res["penalty"], "valid_f1": res["valid_f1"], "test_f1": res["test_f1"],
               "config_hash": resolved["config_hash"]}
    (out / RESULTS).write_text(json.dumps(results, indent=2) + "\n")
    print(json.dumps(results))
    return EXIT_OK


def cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec(
        n_users=args.users,
        tweets_per_user=args.tweets_per_user,
        n_topics=args.topics,
        words_per_topic=args.words_per_topic,
        block_length=args.block_length,
        topic_words=args.topic_words,
        filler_words=args.filler_words,
        filler_vocab=args.filler_vocab,
        relevance=args.relevance,
        seed=args.seed,
    )
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _echo(vars(spec))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    generate_synthetic(spec).write(out / "corpus.tsv", out / "labels.tsv")
    return EXIT_OK


def cmd_report_attention(args) -> int:
    path = Path(args.out) / (ATTENTION_FULL_CSV if args.full_context else ATTENTION_CSV)
    _echo({"report": str(path), "full_context": args.full_context})
    report = AttentionReport.from_csv(path)
    print("epoch,offset,mean_attention,sample_count")
    for epoch, off, mean, count in report.rows():
        print(f"{epoch},{off},{mean:.6f},{count}")
    return EXIT_OK


def cmd_export(args) -> int:
    out = Path(args.out)
    dest = Path(args.dest) if args.dest else out / f"{args.which}.txt"
    _echo({"run": str(out), "which": args.which, "dest": str(dest)})
    store, _ = load_checkpoint(out / CHECKPOINT)
    ids = json.loads((out / IDS).read_text())[args.which]
    matrix = {"words": store.word_vectors, "tweets": store.tweet_vectors, "users": store.user_vectors}[args.which]
    export_embeddings(matrix, ids, dest)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "gen-synthetic": cmd_gen_synthetic,
    "report-attention": cmd_report_attention,
    "export": cmd_export,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"tweetvec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"tweetvec: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorpusError, CheckpointError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"tweetvec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
