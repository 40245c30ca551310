"""Corpus-level BLEU with clipped n-gram counts and brevity penalty.

Scores are computed on whitespace-tokenized, desegmented text with a
single reference per hypothesis, no smoothing, case-sensitive. An n-gram
order with no hypothesis n-grams at all (very short corpora) contributes
a neutral precision of 1 so that a perfect short hypothesis still scores
100; any order with hypothesis n-grams but zero matches makes the whole
score 0.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from . import subword as sw
from .corpus import MultiCorpus
from .model import MultiEncoderModel, translate_batch

MAX_ORDER = 4


@dataclass(frozen=True)
class BleuReport:
    bleu: float                 # percentage in [0, 100]
    precisions: tuple[float, float, float, float]
    brevity_penalty: float
    hyp_length: int
    ref_length: int

    def lines(self) -> list[str]:
        out = [f"bleu={self.bleu!r}"]
        out += [f"p{n}={p!r}" for n, p in enumerate(self.precisions, start=1)]
        out += [
            f"brevity_penalty={self.brevity_penalty!r}",
            f"hyp_length={self.hyp_length}",
            f"ref_length={self.ref_length}",
        ]
        return out


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses, references) -> BleuReport:
    """Corpus BLEU over parallel lists of token sequences."""
    if len(hypotheses) != len(references):
        raise ValueError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references"
        )
    if not hypotheses:
        raise ValueError("need at least one hypothesis/reference pair")
    hyp_len = sum(len(h) for h in hypotheses)
    ref_len = sum(len(r) for r in references)
    numer = [0] * MAX_ORDER
    denom = [0] * MAX_ORDER
    for hyp, ref in zip(hypotheses, references):
        for n in range(1, MAX_ORDER + 1):
            counts = _ngrams(hyp, n)
            if not counts:
                continue
            clipped = counts & _ngrams(ref, n)
            numer[n - 1] += sum(clipped.values())
            denom[n - 1] += max(len(hyp) - n + 1, 0)
    precisions = tuple(
        (numer[i] / denom[i]) if denom[i] > 0 else 1.0 for i in range(MAX_ORDER)
    )
    if hyp_len == 0:
        return BleuReport(0.0, precisions, 0.0, hyp_len, ref_len)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    if any(p == 0.0 for p in precisions):
        score = 0.0
    else:
        score = bp * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER) * 100.0
    return BleuReport(score, precisions, bp, hyp_len, ref_len)


def tokenize_line(line: str) -> list[str]:
    return line.split()


# ---------------------------------------------------------------------------
# model evaluation on a complete test corpus


def translate_corpus(
    model: MultiEncoderModel,
    corpus: MultiCorpus,
    source_languages,
    subword_models: dict[str, sw.SubwordModel],
) -> list[str]:
    """Greedy-translate every row; returns desegmented hypothesis strings."""
    src_idx = [corpus.lang_index(l) for l in source_languages]
    rows = []
    caps = []
    for r, row in enumerate(corpus.rows):
        ids_per_source = []
        for lang, i in zip(source_languages, src_idx):
            cell = row[i]
            if not cell.present:
                raise ValueError(
                    f"row {r}: source language {lang!r} missing in test corpus"
                )
            ids = sw.segment_ids(cell.text, subword_models[lang])
            ids_per_source.append(ids if ids else [sw.UNK_ID])
        rows.append(tuple(ids_per_source))
        caps.append(2 * max(len(s) for s in ids_per_source) + 10)
    tgt_model = subword_models[model.tgt_lang]
    hyps = translate_batch(model, rows, caps)
    return [sw.ids_to_text(h.tokens, tgt_model) for h in hyps]


def evaluate_model(
    model: MultiEncoderModel,
    test_corpus: MultiCorpus,
    source_languages,
    target_language: str,
    subword_models: dict[str, sw.SubwordModel],
) -> BleuReport:
    """Translate a complete test corpus and score against the references."""
    tgt_idx = test_corpus.lang_index(target_language)
    references = []
    for r, row in enumerate(test_corpus.rows):
        if not row[tgt_idx].present:
            raise ValueError(
                f"row {r}: reference language {target_language!r} missing"
            )
        references.append(tokenize_line(row[tgt_idx].text))
    hyp_texts = translate_corpus(model, test_corpus, source_languages, subword_models)
    hypotheses = [tokenize_line(h) for h in hyp_texts]
    return bleu(hypotheses, references)
