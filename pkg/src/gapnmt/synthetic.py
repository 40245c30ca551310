"""Synthetic related-language triple for end-to-end experiments.

Target sentences are random symbol strings; the pivot language is a
symbol-wise bijective relabeling in the same order, and the helper
language is the reversed sentence under a second bijection, mimicking a
closely related language. Helper and target cells are dropped
independently at random; the pivot column stays complete.
"""

from __future__ import annotations

import numpy as np

from .corpus import Cell, MISSING, MultiCorpus

SYMBOLS = (
    "ba", "ce", "di", "fo", "gu", "ha", "je", "ki", "lo", "mu",
    "na", "pe", "ri", "so", "tu", "va", "we", "xi", "yo", "zu",
)


def make_synthetic_triple(
    n_rows: int,
    seed: int,
    languages: tuple[str, str, str] = ("en", "hl", "tg"),
    helper_missing: float = 0.4,
    target_missing: float = 0.4,
    min_len: int = 4,
    max_len: int = 12,
) -> MultiCorpus:
    """Aligned (pivot, helper, target) corpus with independent gaps."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 5]))
    n_sym = len(SYMBOLS)
    pivot_map = rng.permutation(n_sym)
    helper_map = rng.permutation(n_sym)
    rows = []
    for _ in range(n_rows):
        length = int(rng.integers(min_len, max_len + 1))
        target_syms = rng.integers(0, n_sym, size=length)
        pivot_text = " ".join(SYMBOLS[pivot_map[s]] for s in target_syms)
        helper_text = " ".join(SYMBOLS[helper_map[s]] for s in target_syms[::-1])
        target_text = " ".join(SYMBOLS[s] for s in target_syms)
        helper_cell = MISSING if rng.random() < helper_missing else Cell(helper_text)
        target_cell = MISSING if rng.random() < target_missing else Cell(target_text)
        rows.append((Cell(pivot_text), helper_cell, target_cell))
    return MultiCorpus(tuple(languages), rows)
