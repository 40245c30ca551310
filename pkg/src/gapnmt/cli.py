"""Command-line surface: stats, train, translate, score, pipeline.

Exit codes: 0 on success, 2 for usage/validation problems (bad config,
parse errors, malformed inputs), 3 for numeric failures (training
divergence).
"""

from __future__ import annotations

import argparse
import os
import sys

from . import augmentation as aug
from . import corpus as cp
from . import subword as sw
from .config import (
    ConfigError,
    ExperimentConfig,
    pipeline_config_from,
    split_fractions_from,
    train_config_from,
)
from .evaluation import bleu, tokenize_line
from .model import load_checkpoint, translate_batch
from .trainer import DivergenceError, save_report

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class UsageError(ValueError):
    pass


def _load_corpus(path) -> cp.MultiCorpus:
    if not os.path.exists(path):
        raise UsageError(f"corpus file not found: {path}")
    return cp.load_corpus(path)


def _read_lines(path) -> list[str]:
    if not os.path.exists(path):
        raise UsageError(f"file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


# ---------------------------------------------------------------------------
# commands


def cmd_stats(args) -> int:
    corpus = _load_corpus(args.corpus)
    stats = cp.corpus_stats(corpus)
    if args.tsv:
        print("language\tpresent\tmissing\tmissing_of_total\tmissing_of_present")
        for lang in corpus.languages:
            s = stats.per_language[lang]
            print(
                f"{lang}\t{s.present}\t{s.missing}"
                f"\t{s.missing_of_total!r}\t{s.missing_of_present!r}"
            )
    else:
        for lang in corpus.languages:
            s = stats.per_language[lang]
            print(
                f"{lang}: present={s.present} missing={s.missing} "
                f"missing/(present+missing)={100 * s.missing_of_total:.1f}% "
                f"missing/present={100 * s.missing_of_present:.1f}%"
            )
    return EXIT_OK


def _prepare_splits_and_subwords(config: ExperimentConfig, corpus, seed, out):
    fractions = split_fractions_from(config)
    train_c, valid_c, test_c = cp.split(corpus, fractions, seed)
    subword_models = aug.build_subword_models(
        train_c,
        config.get_int("merges_pivot", 500),
        config.get_int("merges_shared", 500),
    )
    vocab_files = aug.save_subword_models(
        subword_models, corpus.pivot, os.path.join(out, "subword")
    )
    vocab_files = {
        lang: os.path.join("..", "subword", name)
        for lang, name in vocab_files.items()
    }
    return train_c, valid_c, test_c, subword_models, vocab_files


def cmd_train(args) -> int:
    config = ExperimentConfig.load(args.config)
    config.require("corpus", "sources", "target")
    seed = args.seed if args.seed is not None else config.get_int("seed", 13)
    out = args.out or config.get("out") or "out"
    os.makedirs(out, exist_ok=True)
    corpus = _load_corpus(config.get("corpus"))
    sources = config.get("sources").split(",")
    target = config.get("target")
    for lang in (*sources, target):
        corpus.lang_index(lang)
    train_c, valid_c, _test_c, subword_models, vocab_files = (
        _prepare_splits_and_subwords(config, corpus, seed, out)
    )
    train_cfg = train_config_from(config, stage=None, seed=seed)
    ckpt_dir = os.path.join(out, "checkpoint")
    _model, report = aug.train_system(
        train_c, valid_c, sources, target, train_cfg, subword_models,
        checkpoint_dir=ckpt_dir, vocab_files=vocab_files,
    )
    save_report(report, os.path.join(out, "train_report.tsv"))
    print(f"checkpoint={ckpt_dir}")
    print(f"best_epoch={report.best_epoch}")
    print(f"best_valid_nll={report.best_valid_nll!r}")
    return EXIT_OK


def cmd_translate(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    if len(args.sources) != model.n_sources:
        raise UsageError(
            f"model has {model.n_sources} encoders but "
            f"{len(args.sources)} source files were given"
        )
    subword_models = {}
    for lang in (*model.src_langs, model.tgt_lang):
        key = f"vocab_file.{lang}"
        if key not in meta:
            raise UsageError(f"checkpoint metadata lacks {key}")
        subword_models[lang] = sw.load_model(
            os.path.normpath(os.path.join(args.checkpoint, meta[key]))
        )
    files = [_read_lines(p) for p in args.sources]
    counts = {len(f) for f in files}
    if len(counts) > 1:
        raise UsageError(
            f"source files disagree on line count: {sorted(counts)}"
        )
    n = counts.pop() if counts else 0
    rows = []
    caps = []
    for r in range(n):
        ids_per_source = []
        for i, lang in enumerate(model.src_langs):
            text = files[i][r].strip()
            if text == sw.NULL or text == "":
                ids_per_source.append([sw.NULL_ID])
            else:
                ids = sw.segment_ids(text, subword_models[lang])
                ids_per_source.append(ids if ids else [sw.UNK_ID])
        rows.append(tuple(ids_per_source))
        caps.append(2 * max(len(s) for s in ids_per_source) + 10)
    hyps = translate_batch(model, rows, caps)
    out = args.out or "out"
    os.makedirs(out, exist_ok=True)
    out_path = os.path.join(out, "hypotheses.txt")
    with open(out_path, "w", encoding="utf-8") as fh:
        for h in hyps:
            fh.write(sw.ids_to_text(h.tokens, subword_models[model.tgt_lang]) + "\n")
    print(f"hypotheses={out_path}")
    return EXIT_OK


def cmd_score(args) -> int:
    hyp_lines = _read_lines(args.hypotheses)
    ref_lines = _read_lines(args.references)
    if len(hyp_lines) != len(ref_lines):
        raise UsageError(
            f"line count mismatch: {len(hyp_lines)} hypotheses vs "
            f"{len(ref_lines)} references"
        )
    report = bleu(
        [tokenize_line(l) for l in hyp_lines],
        [tokenize_line(l) for l in ref_lines],
    )
    print(f"BLEU={report.bleu}")
    for line in report.lines():
        print(line)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    config = ExperimentConfig.load(args.config)
    config.require("corpus", "pivot", "helper", "target")
    seed = args.seed if args.seed is not None else config.get_int("seed", 13)
    out = args.out or config.get("out") or "out"
    corpus = _load_corpus(config.get("corpus"))
    pipe_cfg = pipeline_config_from(config, seed)
    # the output directory is where the manifest itself lives; embedding it
    # would break byte-identity of reruns into fresh directories
    manifest_extra = {"corpus": config.get("corpus")}
    if pipe_cfg.iterations > 1:
        steps = aug.iterative_augment(
            corpus, pipe_cfg, pipe_cfg.iterations, out_dir=out,
            manifest_extra=manifest_extra,
        )
        for s in steps:
            print(f"BLEU={s.bleu.bleu}")
    else:
        result = aug.run_pipeline(
            corpus, pipe_cfg, out_dir=out, manifest_extra=manifest_extra
        )
        print(f"BLEU={result.bleu.bleu}")
    print(f"manifest={os.path.join(out, 'manifest.txt')}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    common.add_argument("--out", default=None, help="output directory")

    parser = argparse.ArgumentParser(
        prog="gapnmt",
        description="multi-source NMT with pseudo-translation augmentation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", parents=[common],
                       help="per-language corpus statistics")
    p.add_argument("corpus")
    p.add_argument("--tsv", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", parents=[common], help="train one system")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", parents=[common],
                       help="translate parallel source files")
    p.add_argument("checkpoint")
    p.add_argument("sources", nargs="+", help="one file per encoder")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("score", parents=[common], help="corpus BLEU of a file pair")
    p.add_argument("hypotheses")
    p.add_argument("references")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("pipeline", parents=[common],
                       help="run the augmentation pipeline")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, cp.CorpusError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
