"""Incomplete multilingual corpus model and transformations.

A corpus is a header of language codes plus aligned rows; each cell is
either present text or missing. The pivot language (column 0) must be
present in every row. All transformations return new corpora; loaded
corpora are treated as immutable.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .subword import NULL


class Provenance(Enum):
    ORIGINAL = "original"
    PSEUDO = "pseudo"
    NULL_FILLED = "null_filled"


@dataclass(frozen=True)
class Cell:
    """One language's entry in a row: present text or missing."""

    text: str | None
    provenance: Provenance = Provenance.ORIGINAL

    @property
    def present(self) -> bool:
        return self.text is not None


MISSING = Cell(None)


class CorpusError(ValueError):
    pass


class CorpusParseError(CorpusError):
    def __init__(self, message: str, line: int) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class MultiCorpus:
    languages: tuple[str, ...]
    rows: list[tuple[Cell, ...]]

    def __post_init__(self) -> None:
        self.languages = tuple(self.languages)

    @property
    def pivot(self) -> str:
        return self.languages[0]

    def lang_index(self, language: str) -> int:
        try:
            return self.languages.index(language)
        except ValueError:
            raise CorpusError(
                f"language {language!r} not in corpus {self.languages}"
            ) from None

    def cell(self, row_idx: int, language: str) -> Cell:
        return self.rows[row_idx][self.lang_index(language)]

    def __len__(self) -> int:
        return len(self.rows)

    def validate(self) -> None:
        n = len(self.languages)
        for i, row in enumerate(self.rows):
            if len(row) != n:
                raise CorpusError(f"row {i} has {len(row)} cells, expected {n}")
            if not row[0].present:
                raise CorpusError(f"row {i}: pivot language {self.pivot!r} is missing")
            for cell in row:
                if cell.provenance is Provenance.PSEUDO and not cell.present:
                    raise CorpusError(f"row {i}: pseudo provenance on a missing cell")


@dataclass(frozen=True)
class LanguageStats:
    present: int
    missing: int

    @property
    def missing_of_total(self) -> float:
        """Missing / (present + missing); 0 for an empty column."""
        total = self.present + self.missing
        return self.missing / total if total else 0.0

    @property
    def missing_of_present(self) -> float:
        """Missing / present, the other reading of published corpus tables."""
        return self.missing / self.present if self.present else 0.0


@dataclass(frozen=True)
class CorpusStats:
    per_language: dict[str, LanguageStats]


def load_corpus(path) -> MultiCorpus:
    """Read a tab-separated corpus file; empty cells mean missing."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise CorpusParseError("empty file, expected a language header", 1)
    languages = tuple(lines[0].split("\t"))
    if len(languages) < 1 or any(not l for l in languages):
        raise CorpusParseError(f"bad language header {lines[0]!r}", 1)
    rows: list[tuple[Cell, ...]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != len(languages):
            raise CorpusParseError(
                f"expected {len(languages)} cells, got {len(fields)}", lineno
            )
        if fields[0] == "":
            raise CorpusParseError(
                f"pivot language {languages[0]!r} is missing", lineno
            )
        rows.append(tuple(Cell(f) if f != "" else MISSING for f in fields))
    return MultiCorpus(languages, rows)


def save_corpus(corpus: MultiCorpus, path) -> None:
    lines = ["\t".join(corpus.languages)]
    for i, row in enumerate(corpus.rows):
        fields = []
        for cell in row:
            text = cell.text if cell.present else ""
            if "\t" in text or "\n" in text:
                raise CorpusError(f"row {i}: cell text contains tab or newline")
            fields.append(text)
        lines.append("\t".join(fields))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def corpus_stats(corpus: MultiCorpus) -> CorpusStats:
    per_language = {}
    for i, lang in enumerate(corpus.languages):
        present = sum(1 for row in corpus.rows if row[i].present)
        per_language[lang] = LanguageStats(present, len(corpus.rows) - present)
    return CorpusStats(per_language)


def fill_null(corpus: MultiCorpus, language: str) -> MultiCorpus:
    """Replace every missing cell of `language` with the ⟨NULL⟩ sentence."""
    li = corpus.lang_index(language)
    filler = Cell(NULL, Provenance.NULL_FILLED)
    rows = [
        row if row[li].present else row[:li] + (filler,) + row[li + 1:]
        for row in corpus.rows
    ]
    return MultiCorpus(corpus.languages, rows)


def filter_complete(corpus: MultiCorpus, languages: Sequence[str]) -> MultiCorpus:
    """Keep rows where all requested languages carry original or pseudo text."""
    idxs = [corpus.lang_index(l) for l in languages]
    ok = (Provenance.ORIGINAL, Provenance.PSEUDO)
    rows = [
        row
        for row in corpus.rows
        if all(row[i].present and row[i].provenance in ok for i in idxs)
    ]
    return MultiCorpus(corpus.languages, rows)


def split(
    corpus: MultiCorpus, fractions: tuple[float, float, float], seed: int
) -> tuple[MultiCorpus, MultiCorpus, MultiCorpus]:
    """Shuffle deterministically and partition into (train, valid, test).

    The test partition keeps only rows complete in every language, since
    evaluation requires all sources and the reference.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise CorpusError(f"fractions must be three positives, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise CorpusError(f"fractions must sum to 1, got {fractions}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0]))
    order = rng.permutation(len(corpus.rows))
    shuffled = [corpus.rows[i] for i in order]
    n = len(shuffled)
    n_train = int(round(fractions[0] * n))
    n_valid = int(round(fractions[1] * n))
    n_train = min(n_train, n)
    n_valid = min(n_valid, n - n_train)
    train = MultiCorpus(corpus.languages, shuffled[:n_train])
    valid = MultiCorpus(corpus.languages, shuffled[n_train:n_train + n_valid])
    test_rows = [
        row for row in shuffled[n_train + n_valid:] if all(c.present for c in row)
    ]
    test = MultiCorpus(corpus.languages, test_rows)
    return train, valid, test
