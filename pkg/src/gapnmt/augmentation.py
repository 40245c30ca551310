"""Pseudo-translation augmentation for incomplete multilingual corpora.

The three-step procedure: (1) train a helper-language filler, a
two-encoder model whose sources are the pivot and the final target
language, on rows where the helper text exists, null-filling the target
source where it is missing; (2) generate helper pseudo-translations with
that filler; (3) rewrite the corpus with one of the three strategies and
train the final model from (pivot, helper) into the target language.

Strategies: fill-in completes only the gaps; fill-in-and-replace also
overwrites existing non-pivot translations with pseudo-translations;
fill-in-and-add keeps the originals and appends pseudo duplicates.

Also provides the one-to-one back-translation filler baseline and the
alternating iterative variant that re-fills one non-pivot language per
step with the newest model and retrains the opposite direction.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import corpus as cp
from . import subword as sw
from .corpus import Cell, MultiCorpus, Provenance
from .evaluation import BleuReport, tokenize_line, translate_corpus
from .evaluation import bleu as corpus_bleu
from .model import MultiEncoderModel, translate_batch
from .trainer import TrainConfig, TrainReport, make_examples, train


class AugmentationStrategy(Enum):
    FILL_IN = "fill_in"
    FILL_IN_REPLACE = "fill_in_replace"
    FILL_IN_ADD = "fill_in_add"

    @classmethod
    def parse(cls, name: str) -> "AugmentationStrategy":
        for member in cls:
            if member.value == name:
                return member
        valid = ", ".join(m.value for m in cls)
        raise ValueError(f"unknown strategy {name!r}; valid strategies: {valid}")


class Scope(Enum):
    MISSING_ONLY = "missing_only"
    ALL = "all"


def strategy_scope(strategy: AugmentationStrategy) -> Scope:
    """Replace/add need pseudo-translations for present rows too."""
    return Scope.MISSING_ONLY if strategy is AugmentationStrategy.FILL_IN else Scope.ALL


@dataclass
class PipelineConfig:
    pivot: str
    helper: str
    target: str
    strategy: AugmentationStrategy = AugmentationStrategy.FILL_IN
    filler_train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    final_train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    iterations: int = 1
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    merges_pivot: int = 500
    merges_shared: int = 500
    seed: int = 13

    def __post_init__(self) -> None:
        langs = (self.pivot, self.helper, self.target)
        if len(set(langs)) != 3:
            raise ValueError(f"pivot/helper/target must be distinct, got {langs}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")


def derive_seed(seed: int, *tags: int) -> int:
    """Stable derived seed for one pipeline stage."""
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# subword model construction: one model for the pivot, one shared by the
# other languages of the set


def build_subword_models(
    train_corpus: MultiCorpus, merges_pivot: int, merges_shared: int
) -> dict[str, sw.SubwordModel]:
    pivot = train_corpus.pivot
    pivot_sents = [
        row[0].text
        for row in train_corpus.rows
        if row[0].present and row[0].provenance is Provenance.ORIGINAL
    ]
    shared_sents = []
    for row in train_corpus.rows:
        for i in range(1, len(train_corpus.languages)):
            cell = row[i]
            if cell.present and cell.provenance is Provenance.ORIGINAL:
                shared_sents.append(cell.text)
    pivot_model = sw.train_bpe(pivot_sents, merges_pivot)
    shared_model = sw.train_bpe(shared_sents, merges_shared)
    models = {pivot: pivot_model}
    for lang in train_corpus.languages[1:]:
        models[lang] = shared_model
    return models


def save_subword_models(models: dict[str, sw.SubwordModel], pivot: str, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    pivot_path = os.path.join(out_dir, "pivot.bpe")
    shared_path = os.path.join(out_dir, "shared.bpe")
    sw.save_model(models[pivot], pivot_path)
    shared = next(m for lang, m in models.items() if lang != pivot)
    sw.save_model(shared, shared_path)
    return {
        lang: ("pivot.bpe" if lang == pivot else "shared.bpe") for lang in models
    }


# ---------------------------------------------------------------------------
# training wrappers


def train_system(
    train_corpus: MultiCorpus,
    valid_corpus: MultiCorpus,
    src_langs,
    tgt_lang: str,
    config: TrainConfig,
    subword_models: dict[str, sw.SubwordModel],
    checkpoint_dir=None,
    vocab_files=None,
) -> tuple[MultiEncoderModel, TrainReport]:
    """Train (src_langs) -> tgt_lang on rows with a target; missing source
    cells are null-filled."""
    for lang in src_langs:
        train_corpus = cp.fill_null(train_corpus, lang)
        valid_corpus = cp.fill_null(valid_corpus, lang)
    train_examples = make_examples(train_corpus, src_langs, tgt_lang, subword_models)
    valid_examples = make_examples(valid_corpus, src_langs, tgt_lang, subword_models)
    if not train_examples:
        raise cp.CorpusError(
            f"no training rows with {tgt_lang!r} present; cannot train"
        )
    model = MultiEncoderModel.create(
        tuple(src_langs),
        tgt_lang,
        tuple(subword_models[l].vocab_size for l in src_langs),
        subword_models[tgt_lang].vocab_size,
        config.d_lstm,
        config.embed_dim,
        seed=config.seed,
    )
    return train(
        model, train_examples, valid_examples, config,
        checkpoint_dir=checkpoint_dir, vocab_files=vocab_files,
    )


def train_filler(
    train_corpus: MultiCorpus,
    valid_corpus: MultiCorpus,
    pivot: str,
    other_source: str,
    fill_target: str,
    config: TrainConfig,
    subword_models: dict[str, sw.SubwordModel],
    checkpoint_dir=None,
    vocab_files=None,
) -> tuple[MultiEncoderModel, TrainReport]:
    """Step 1: two-encoder (pivot, other_source) -> fill_target model,
    trained where fill_target text exists, other_source null-filled."""
    return train_system(
        train_corpus, valid_corpus, [pivot, other_source], fill_target,
        config, subword_models, checkpoint_dir, vocab_files,
    )


# ---------------------------------------------------------------------------
# pseudo-translation generation and corpus rewriting


def generate_pseudo(
    model: MultiEncoderModel,
    corpus: MultiCorpus,
    fill_target: str,
    scope: Scope,
    subword_models: dict[str, sw.SubwordModel],
) -> dict[int, str]:
    """Translate in-scope rows into fill_target; keyed by row index.

    Encoder inputs come from the model's own source languages; a missing
    input cell becomes the single ⟨NULL⟩ token.
    """
    tgt_idx = corpus.lang_index(fill_target)
    src_idx = [corpus.lang_index(l) for l in model.src_langs]
    row_ids = []
    inputs = []
    caps = []
    for r, row in enumerate(corpus.rows):
        if scope is Scope.MISSING_ONLY and row[tgt_idx].present:
            continue
        ids_per_source = []
        for lang, i in zip(model.src_langs, src_idx):
            cell = row[i]
            if cell.present:
                ids = sw.segment_ids(cell.text, subword_models[lang])
                ids_per_source.append(ids if ids else [sw.UNK_ID])
            else:
                ids_per_source.append([sw.NULL_ID])
        row_ids.append(r)
        inputs.append(tuple(ids_per_source))
        caps.append(2 * max(len(s) for s in ids_per_source) + 10)
    hyps = translate_batch(model, inputs, caps)
    tgt_model = subword_models[model.tgt_lang]
    # the null placeholder is never content; emitting it into pseudo text
    # would reintroduce exactly what the augmentation removes
    return {
        r: sw.ids_to_text(h.tokens, tgt_model, drop=(sw.NULL_ID,))
        for r, h in zip(row_ids, hyps)
    }


def apply_strategy(
    corpus: MultiCorpus,
    pseudo: dict[int, str],
    language: str,
    strategy: AugmentationStrategy,
) -> MultiCorpus:
    """Rewrite one language column according to the augmentation strategy.

    fill_in: missing cells become pseudo text, row count unchanged.
    fill_in_replace: missing cells filled and original cells overwritten.
    fill_in_add: missing cells filled; rows whose cell was original are
    additionally duplicated with the pseudo text, appended after all base
    rows in original order. Other columns are never touched.
    """
    li = corpus.lang_index(language)

    def pseudo_cell(r: int) -> Cell:
        try:
            return Cell(pseudo[r], Provenance.PSEUDO)
        except KeyError:
            raise cp.CorpusError(
                f"no pseudo-translation for row {r} of language {language!r}"
            ) from None

    rows: list[tuple[Cell, ...]] = []
    added: list[tuple[Cell, ...]] = []
    for r, row in enumerate(corpus.rows):
        cell = row[li]
        if not cell.present:
            rows.append(row[:li] + (pseudo_cell(r),) + row[li + 1:])
            continue
        if cell.provenance is Provenance.ORIGINAL:
            if strategy is AugmentationStrategy.FILL_IN_REPLACE:
                rows.append(row[:li] + (pseudo_cell(r),) + row[li + 1:])
                continue
            if strategy is AugmentationStrategy.FILL_IN_ADD:
                added.append(row[:li] + (pseudo_cell(r),) + row[li + 1:])
        rows.append(row)
    return MultiCorpus(corpus.languages, rows + added)


def save_pseudo_audit(pseudo: dict[int, str], language: str, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in sorted(pseudo):
            fh.write(f"{r}\t{language}\t{pseudo[r]}\n")


# ---------------------------------------------------------------------------
# the three-step pipeline


@dataclass
class PipelineResult:
    model: MultiEncoderModel
    bleu: BleuReport
    hypotheses: list[str]
    filler_report: TrainReport
    final_report: TrainReport
    out_dir: str | None = None
    filler_model: MultiEncoderModel | None = None
    helper_fill_train: dict[int, str] | None = None
    helper_fill_valid: dict[int, str] | None = None
    augmented_train: MultiCorpus | None = None


def run_pipeline(
    corpus: MultiCorpus,
    config: PipelineConfig,
    out_dir=None,
    manifest_extra: dict[str, str] | None = None,
) -> PipelineResult:
    """Split, build subword models, run the three steps, evaluate on the
    complete test split, and (optionally) write all artifacts."""
    train_c, valid_c, test_c = cp.split(corpus, config.split_fractions, config.seed)
    subword_models = build_subword_models(
        train_c, config.merges_pivot, config.merges_shared
    )
    return _run_three_steps(
        train_c, valid_c, test_c, config, subword_models, out_dir, manifest_extra
    )


def _write_text(path, lines) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


def _evaluate_and_dump(model, test_c, src_langs, tgt_lang, subword_models, out_dir):
    hyps = translate_corpus(model, test_c, src_langs, subword_models)
    tgt_idx = test_c.lang_index(tgt_lang)
    refs = [row[tgt_idx].text for row in test_c.rows]
    report = corpus_bleu(
        [tokenize_line(h) for h in hyps], [tokenize_line(r) for r in refs]
    )
    if out_dir is not None:
        _write_text(os.path.join(out_dir, "hypotheses.txt"), hyps)
        _write_text(os.path.join(out_dir, "references.txt"), refs)
        _write_text(os.path.join(out_dir, "bleu.txt"), report.lines())
    return report, hyps


def _run_three_steps(
    train_c, valid_c, test_c, config: PipelineConfig, subword_models,
    out_dir=None, manifest_extra=None,
) -> PipelineResult:
    artifacts: list[tuple[str, str]] = []
    vocab_files = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        vocab_files = save_subword_models(
            subword_models, config.pivot, os.path.join(out_dir, "subword")
        )
        vocab_files = {
            lang: os.path.join("..", "subword", name)
            for lang, name in vocab_files.items()
        }
        artifacts.append(("artifact.subword_dir", "subword"))

    # step 1: helper-language filler (pivot + target as sources)
    filler_dir = os.path.join(out_dir, "stage1_filler") if out_dir else None
    filler_cfg = dataclasses.replace(
        config.filler_train, seed=derive_seed(config.seed, 11)
    )
    filler, filler_report = train_filler(
        train_c, valid_c, config.pivot, config.target, config.helper,
        filler_cfg, subword_models, filler_dir, vocab_files,
    )
    if out_dir is not None:
        from .trainer import save_report

        save_report(filler_report, os.path.join(out_dir, "stage1_filler_report.tsv"))
        artifacts.append(("artifact.stage1_checkpoint", "stage1_filler"))

    # step 2: helper pseudo-translations
    scope = strategy_scope(config.strategy)
    pseudo_train = generate_pseudo(filler, train_c, config.helper, scope, subword_models)
    pseudo_valid = generate_pseudo(
        filler, valid_c, config.helper, Scope.MISSING_ONLY, subword_models
    )
    if out_dir is not None:
        save_pseudo_audit(
            pseudo_train, config.helper, os.path.join(out_dir, "pseudo_train.tsv")
        )
        save_pseudo_audit(
            pseudo_valid, config.helper, os.path.join(out_dir, "pseudo_valid.tsv")
        )
        artifacts.append(("artifact.pseudo_audit_train", "pseudo_train.tsv"))
        artifacts.append(("artifact.pseudo_audit_valid", "pseudo_valid.tsv"))

    # step 3: strategy-rewritten corpus, final model toward the target.
    # Validation keeps original helper text where it exists (fill-in only)
    # so early stopping always measures the complete-row condition.
    aug_train = apply_strategy(train_c, pseudo_train, config.helper, config.strategy)
    aug_valid = apply_strategy(
        valid_c, pseudo_valid, config.helper, AugmentationStrategy.FILL_IN
    )
    if out_dir is not None:
        cp.save_corpus(aug_train, os.path.join(out_dir, "augmented_train.tsv"))
        cp.save_corpus(aug_valid, os.path.join(out_dir, "augmented_valid.tsv"))
        artifacts.append(("artifact.augmented_train", "augmented_train.tsv"))
        artifacts.append(("artifact.augmented_valid", "augmented_valid.tsv"))
    final_dir = os.path.join(out_dir, "stage3_final") if out_dir else None
    final_cfg = dataclasses.replace(
        config.final_train, seed=derive_seed(config.seed, 13)
    )
    final, final_report = train_system(
        aug_train, aug_valid, [config.pivot, config.helper], config.target,
        final_cfg, subword_models, final_dir, vocab_files,
    )
    if out_dir is not None:
        from .trainer import save_report

        save_report(final_report, os.path.join(out_dir, "stage3_final_report.tsv"))
        artifacts.append(("artifact.stage3_checkpoint", "stage3_final"))

    report, hyps = _evaluate_and_dump(
        final, test_c, [config.pivot, config.helper], config.target,
        subword_models, out_dir,
    )
    if out_dir is not None:
        artifacts.append(("artifact.hypotheses", "hypotheses.txt"))
        artifacts.append(("artifact.references", "references.txt"))
        artifacts.append(("artifact.bleu_report", "bleu.txt"))
        artifacts.append(("artifact.bleu.1", repr(report.bleu)))
        _write_manifest(out_dir, config, manifest_extra, artifacts)
    return PipelineResult(
        model=final, bleu=report, hypotheses=hyps,
        filler_report=filler_report, final_report=final_report,
        out_dir=out_dir, filler_model=filler,
        helper_fill_train=pseudo_train, helper_fill_valid=pseudo_valid,
        augmented_train=aug_train,
    )


def _write_manifest(out_dir, config: PipelineConfig, manifest_extra, artifacts):
    items: list[tuple[str, str]] = []
    if manifest_extra:
        items.extend(sorted(manifest_extra.items()))
    items.extend(pipeline_config_items(config))
    items.extend(artifacts)
    _write_text(
        os.path.join(out_dir, "manifest.txt"), [f"{k}={v}" for k, v in items]
    )


def pipeline_config_items(config: PipelineConfig) -> list[tuple[str, str]]:
    """Canonical key=value form of a pipeline configuration; rerunning a
    manifest through the CLI reconstructs an identical configuration."""
    items = [
        ("pivot", config.pivot),
        ("helper", config.helper),
        ("target", config.target),
        ("strategy", config.strategy.value),
        ("iterations", str(config.iterations)),
        ("seed", str(config.seed)),
        ("split", ",".join(repr(f) for f in config.split_fractions)),
        ("merges_pivot", str(config.merges_pivot)),
        ("merges_shared", str(config.merges_shared)),
    ]
    for prefix, tc in (("filler", config.filler_train), ("final", config.final_train)):
        items.extend(
            (f"{prefix}.{key}", val)
            for key, val in (
                ("d_lstm", str(tc.d_lstm)),
                ("d_dec", str(tc.d_dec)),
                ("embed_dim", str(tc.embed_dim)),
                ("learning_rate", repr(tc.learning_rate)),
                ("clip_norm", repr(tc.clip_norm)),
                ("batch_size", str(tc.batch_size)),
                ("patience", str(tc.patience)),
                ("max_epochs", str(tc.max_epochs)),
            )
        )
    return items


# ---------------------------------------------------------------------------
# one-to-one back-translation baseline


@dataclass
class BackTranslationResult:
    pseudo_train: dict[int, str]
    pseudo_valid: dict[int, str]
    model: MultiEncoderModel
    report: TrainReport


def back_translate_baseline(
    train_corpus: MultiCorpus,
    valid_corpus: MultiCorpus,
    pivot: str,
    fill_target: str,
    config: TrainConfig,
    subword_models: dict[str, sw.SubwordModel],
    scope: Scope = Scope.MISSING_ONLY,
) -> BackTranslationResult:
    """Train a one-encoder pivot -> fill_target model on complete pairs and
    produce pseudo-translations with it."""
    model, report = train_system(
        train_corpus, valid_corpus, [pivot], fill_target, config, subword_models
    )
    pseudo_train = generate_pseudo(
        model, train_corpus, fill_target, scope, subword_models
    )
    pseudo_valid = generate_pseudo(
        model, valid_corpus, fill_target, Scope.MISSING_ONLY, subword_models
    )
    return BackTranslationResult(pseudo_train, pseudo_valid, model, report)


# ---------------------------------------------------------------------------
# iterative augmentation


@dataclass
class IterationStep:
    step: int
    filled_language: str
    target_language: str
    model: MultiEncoderModel
    bleu: BleuReport
    out_dir: str | None = None


def iterative_augment(
    corpus: MultiCorpus,
    config: PipelineConfig,
    n_steps: int,
    out_dir=None,
    manifest_extra: dict[str, str] | None = None,
) -> list[IterationStep]:
    """Alternate filling the two non-pivot languages with the newest models.

    Step 1 is the plain three-step pipeline (fills the helper, trains into
    the target). Step k then fills the helper if k is odd and the target
    if k is even, using the newest model that translates into that
    language, and retrains the opposite-direction model from scratch on
    the re-filled corpus. All corpora derive from the same fixed split.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    train_c, valid_c, test_c = cp.split(corpus, config.split_fractions, config.seed)
    subword_models = build_subword_models(
        train_c, config.merges_pivot, config.merges_shared
    )

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    step_dir = os.path.join(out_dir, "step_1") if out_dir else None
    first = _run_three_steps(
        train_c, valid_c, test_c, config, subword_models, step_dir,
        dict(manifest_extra or {}, **{"iterations": "1"}),
    )
    steps = [
        IterationStep(1, config.helper, config.target, first.model, first.bleu,
                      step_dir)
    ]
    # newest model translating into each non-pivot language, plus the
    # newest gap fills per language for generator inputs
    into_lang_model = {
        config.target: first.model,
        config.helper: first.filler_model,
    }
    latest_fill_train = {config.helper: first.helper_fill_train}
    latest_fill_valid = {config.helper: first.helper_fill_valid}
    scope = strategy_scope(config.strategy)

    for k in range(2, n_steps + 1):
        fill_lang = config.helper if k % 2 == 1 else config.target
        step_target = config.target if fill_lang == config.helper else config.helper
        generator = into_lang_model[fill_lang]

        # generator inputs: its own source languages, gaps filled with the
        # newest pseudo-translations where available
        gen_train = _fill_view(train_c, latest_fill_train, generator.src_langs)
        gen_valid = _fill_view(valid_c, latest_fill_valid, generator.src_langs)
        new_train = generate_pseudo(generator, gen_train, fill_lang, scope,
                                    subword_models)
        new_valid = generate_pseudo(generator, gen_valid, fill_lang,
                                    Scope.MISSING_ONLY, subword_models)
        latest_fill_train[fill_lang] = new_train
        latest_fill_valid[fill_lang] = new_valid

        aug_train = apply_strategy(train_c, new_train, fill_lang, config.strategy)
        aug_valid = apply_strategy(
            valid_c, new_valid, fill_lang, AugmentationStrategy.FILL_IN
        )
        step_dir = os.path.join(out_dir, f"step_{k}") if out_dir else None
        ckpt_dir = os.path.join(step_dir, "model") if step_dir else None
        if step_dir is not None:
            os.makedirs(step_dir, exist_ok=True)
            save_pseudo_audit(
                new_train, fill_lang, os.path.join(step_dir, "pseudo_train.tsv")
            )
        step_cfg = dataclasses.replace(
            config.final_train, seed=derive_seed(config.seed, 20 + k)
        )
        step_model, step_report = train_system(
            aug_train, aug_valid, [config.pivot, fill_lang], step_target,
            step_cfg, subword_models, ckpt_dir,
        )
        report, _hyps = _evaluate_and_dump(
            step_model, test_c, [config.pivot, fill_lang], step_target,
            subword_models, step_dir,
        )
        if step_dir is not None:
            items = [("step", str(k)), ("fill_language", fill_lang),
                     ("step_target", step_target),
                     ("artifact.bleu.1", repr(report.bleu))]
            _write_text(
                os.path.join(step_dir, "manifest.txt"),
                [f"{k_}={v_}" for k_, v_ in items],
            )
        into_lang_model[step_target] = step_model
        steps.append(
            IterationStep(k, fill_lang, step_target, step_model, report, step_dir)
        )

    if out_dir is not None:
        items = []
        if manifest_extra:
            items.extend(sorted(manifest_extra.items()))
        items.extend(pipeline_config_items(config))
        for s in steps:
            items.append((f"artifact.step{s.step}", f"step_{s.step}"))
            items.append((f"artifact.bleu.{s.step}", repr(s.bleu.bleu)))
        _write_text(
            os.path.join(out_dir, "manifest.txt"), [f"{k}={v}" for k, v in items]
        )
    return steps


def _fill_view(corpus: MultiCorpus, fills: dict[str, dict[int, str]], langs):
    """Fill missing cells of the given languages from pseudo maps where
    available; remaining gaps stay missing (they become ⟨NULL⟩ inputs)."""
    out = corpus
    for lang in langs:
        fill = fills.get(lang)
        if not fill:
            continue
        li = out.lang_index(lang)
        rows = []
        for r, row in enumerate(out.rows):
            if not row[li].present and r in fill:
                rows.append(
                    row[:li] + (Cell(fill[r], Provenance.PSEUDO),) + row[li + 1:]
                )
            else:
                rows.append(row)
        out = MultiCorpus(out.languages, rows)
    return out
