"""Command-line interface wiring the pipeline together.

Subcommands: ``build-vocab``, ``train``, ``train-ei``, ``eval-sim``,
``eval-entail``, ``nearest``, ``viz``, ``export``.  Exit codes: 0 success,
1 usage error, 2 data error.  ``GAUSS_EMBED_SEED`` overrides ``--seed``
when set.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

from .corpus import (
    build_sampling_tables,
    build_vocabulary,
    encode_corpus,
    load_vocabulary,
    save_vocabulary,
)
from .evaluation import (
    EvalReport,
    eval_entailment,
    eval_similarity,
    load_entailment_dataset,
    load_similarity_dataset,
    nearest,
)
from .model_io import load_model, save_model
from .relations import SENTINEL_WORD, load_relations
from .training import TrainConfig, train
from .viz import build_viz_spec, emit_viz

SEED_ENV_VAR = "GAUSS_EMBED_SEED"

logger = logging.getLogger(__name__)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad usage; the CLI contract wants 1.
    def error(self, message):
        raise _UsageError(message)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    """One long flag per TrainConfig field, named identically."""
    parser.add_argument("--dim", type=int, default=TrainConfig.dim)
    parser.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    parser.add_argument("--window", type=int, default=TrainConfig.window)
    parser.add_argument("--negatives", type=int, default=TrainConfig.negatives)
    parser.add_argument("--learning-rate", type=float, default=TrainConfig.learning_rate)
    parser.add_argument("--lr-min", type=float, default=TrainConfig.lr_min)
    parser.add_argument("--subsample", type=float, default=TrainConfig.subsample)
    parser.add_argument("--alpha", type=float, default=TrainConfig.alpha)
    parser.add_argument("--min-count", type=int, default=TrainConfig.min_count)
    parser.add_argument("--sigma-init", type=float, default=TrainConfig.sigma_init)
    parser.add_argument("--sigma-min", type=float, default=TrainConfig.sigma_min)
    parser.add_argument("--sigma-max", type=float, default=TrainConfig.sigma_max)
    parser.add_argument("--max-norm", type=float, default=None)
    parser.add_argument("--seed", type=int, default=TrainConfig.seed)
    parser.add_argument("--bias-mode", choices=["learned", "fixed"],
                        default=TrainConfig.bias_mode)
    parser.add_argument("--fixed-bias-value", type=float,
                        default=TrainConfig.fixed_bias_value)
    parser.add_argument("--squared-w2-energy", action="store_true")
    parser.add_argument("--dynamic-window", action="store_true")
    parser.add_argument("--threads", type=int, default=TrainConfig.threads)
    parser.add_argument("--shuffle-buffer", type=int, default=TrainConfig.shuffle_buffer)
    parser.add_argument("--negative-table-size", type=int,
                        default=TrainConfig.negative_table_size)


def _config_from_args(args, ei_mode: str = "all") -> TrainConfig:
    seed = args.seed
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        seed = int(env_seed)
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    values = {k: v for k, v in vars(args).items() if k in fields}
    values["seed"] = seed
    values["ei_mode"] = ei_mode
    return TrainConfig(**values)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gauss-embed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="count a corpus into a vocabulary file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--min-count", type=int, default=TrainConfig.min_count)
    p.add_argument("--output", required=True)

    for name in ("train", "train-ei"):
        p = sub.add_parser(name, help=f"{name} a model on a corpus")
        p.add_argument("--corpus", required=True)
        p.add_argument("--vocab", help="reuse a saved vocabulary instead of counting")
        p.add_argument("--save-vocab", help="also write the vocabulary here")
        p.add_argument("--output", required=True)
        p.add_argument("--format", choices=["text", "binary"], default="text")
        if name == "train-ei":
            p.add_argument("--relations", required=True)
            p.add_argument("--ei-mode", choices=["all", "isa"], default="all")
        _add_config_flags(p)

    p = sub.add_parser("eval-sim", help="word-similarity correlation")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True, action="append",
                   help="similarity TSV; repeatable")
    p.add_argument("--pretty", action="store_true", help="also print a table")

    p = sub.add_parser("eval-entail", help="entailment best-F1 / best-AP")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--pretty", action="store_true")

    p = sub.add_parser("nearest", help="nearest neighbors of a word")
    p.add_argument("--model", required=True)
    p.add_argument("--word", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--metric", choices=["cosine", "w2", "kl"], default="cosine")

    p = sub.add_parser("viz", help="PCA circle plot of selected words")
    p.add_argument("--model", required=True)
    p.add_argument("--words", required=True, help="comma-separated word list")
    p.add_argument("--output", required=True)
    p.add_argument("--extent", type=float, default=1000.0)
    p.add_argument("--pca-global", action="store_true",
                   help="fit the projection on the whole vocabulary")

    p = sub.add_parser("export", help="convert a model between formats")
    p.add_argument("--model", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--format", choices=["text", "binary"], required=True)

    return parser


def _cmd_build_vocab(args) -> int:
    vocab = build_vocabulary(args.corpus, min_count=args.min_count)
    save_vocabulary(vocab, args.output)
    print(f"vocab={len(vocab)} total_tokens={vocab.total_tokens}")
    return 0


def _cmd_train(args, with_relations: bool) -> int:
    config = _config_from_args(
        args, ei_mode=getattr(args, "ei_mode", "all") if with_relations else "all"
    )
    if args.vocab:
        vocab = load_vocabulary(args.vocab)
    else:
        vocab = build_vocabulary(args.corpus, min_count=config.min_count)
    if args.save_vocab:
        save_vocabulary(vocab, args.save_vocab)
    tables = build_sampling_tables(
        vocab,
        subsample=config.subsample,
        table_size=max(config.negative_table_size, len(vocab)),
    )
    store = None
    words = vocab.words
    if with_relations:
        store, ingest = load_relations(args.relations, vocab)
        print(ingest.as_line())
        words = vocab.words + (SENTINEL_WORD,)
    encoded = encode_corpus(args.corpus, vocab)
    params, report = train(
        args.corpus, vocab, tables, config, relations=store, encoded=encoded
    )
    for line in report.lines():
        print(line)
    save_model(params, words, args.output, fmt=args.format)
    return 0


def _cmd_eval_sim(args) -> int:
    params, index = load_model(args.model)
    report = EvalReport()
    for path in args.dataset:
        dataset = load_similarity_dataset(path)
        report.similarity.append(eval_similarity(params, index, dataset))
    if args.pretty:
        print(report.table())
    for line in report.lines():
        print(line)
    return 0


def _cmd_eval_entail(args) -> int:
    params, index = load_model(args.model)
    dataset = load_entailment_dataset(args.dataset)
    report = EvalReport(entailment=eval_entailment(params, index, dataset))
    if args.pretty:
        print(report.table())
    for line in report.lines():
        print(line)
    return 0


def _cmd_nearest(args) -> int:
    params, index = load_model(args.model)
    for word, score in nearest(params, index, args.word, args.n, args.metric):
        print(f"{word}\t{score:.6f}")
    return 0


def _cmd_viz(args) -> int:
    params, index = load_model(args.model)
    words = [w for w in args.words.split(",") if w]
    spec = build_viz_spec(
        params, index, words, extent=args.extent,
        pca="global" if args.pca_global else "selected",
    )
    emit_viz(spec, args.output)
    return 0


def _cmd_export(args) -> int:
    params, index = load_model(args.model)
    save_model(params, index, args.output, fmt=args.format)
    return 0


def cli(argv=None) -> int:
    """Run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "build-vocab":
            return _cmd_build_vocab(args)
        if args.command == "train":
            return _cmd_train(args, with_relations=False)
        if args.command == "train-ei":
            return _cmd_train(args, with_relations=True)
        if args.command == "eval-sim":
            return _cmd_eval_sim(args)
        if args.command == "eval-entail":
            return _cmd_eval_entail(args)
        if args.command == "nearest":
            return _cmd_nearest(args)
        if args.command == "viz":
            return _cmd_viz(args)
        if args.command == "export":
            return _cmd_export(args)
        raise AssertionError(f"unhandled command {args.command}")
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    sys.exit(cli())


if __name__ == "__main__":
    main()
