"""Byte-pair-encoding subword segmentation.

Training starts from characters within whitespace-delimited words and
greedily merges the most frequent adjacent symbol pair, ties broken by
lexicographic order, so identical input always yields identical models.
Word starts are marked with the reserved prefix symbol so that
desegmentation is an exact inverse on single-spaced text.
"""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

PAD, BOS, EOS, UNK, NULL = "⟨pad⟩", "⟨s⟩", "⟨/s⟩", "⟨unk⟩", "⟨NULL⟩"
RESERVED = (PAD, BOS, EOS, UNK, NULL)
PAD_ID, BOS_ID, EOS_ID, UNK_ID, NULL_ID = range(5)

WORD_START = "▁"  # same marker convention as common subword tools


class SubwordModel:
    """Ordered merge rules plus a token<->id vocabulary.

    Reserved tokens occupy ids 0-4. The vocabulary covers every symbol a
    segmentation can produce: the training alphabet, the word-start
    marker, and each merge result.
    """

    def __init__(self, merges: list[tuple[str, str]], alphabet: set[str]) -> None:
        self.merges = list(merges)
        self.alphabet = set(alphabet)
        self.token_to_id: dict[str, int] = {tok: i for i, tok in enumerate(RESERVED)}
        for sym in sorted(self.alphabet):
            self.token_to_id.setdefault(sym, len(self.token_to_id))
        for left, right in self.merges:
            self.token_to_id.setdefault(left + right, len(self.token_to_id))
        self.id_to_token = [None] * len(self.token_to_id)
        for tok, i in self.token_to_id.items():
            self.id_to_token[i] = tok
        self._word_cache: dict[str, tuple[str, ...]] = {}

    @property
    def vocab_size(self) -> int:
        return len(self.token_to_id)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SubwordModel)
            and self.merges == other.merges
            and self.token_to_id == other.token_to_id
        )


def train_bpe(sentences: Iterable[str], n_merges: int) -> SubwordModel:
    """Learn `n_merges` greedy pair merges from a sentence collection."""
    if n_merges < 0:
        raise ValueError(f"n_merges must be >= 0, got {n_merges}")
    word_counts: Counter[str] = Counter()
    for sent in sentences:
        word_counts.update(sent.split())
    if not word_counts:
        raise ValueError("cannot train subword model on an empty sentence collection")

    words: dict[str, list[str]] = {
        w: [WORD_START, *w] for w in word_counts
    }
    alphabet = {sym for seq in words.values() for sym in seq}
    merges: list[tuple[str, str]] = []
    for _ in range(n_merges):
        pair_counts: Counter[tuple[str, str]] = Counter()
        for w, seq in words.items():
            c = word_counts[w]
            for a, b in zip(seq, seq[1:]):
                pair_counts[(a, b)] += c
        if not pair_counts:
            break
        best = min(pair_counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merges.append(best)
        for w, seq in words.items():
            words[w] = _apply_merge(seq, best)
    return SubwordModel(merges, alphabet)


def _apply_merge(seq: list[str], pair: tuple[str, str]) -> list[str]:
    a, b = pair
    out: list[str] = []
    i = 0
    n = len(seq)
    while i < n:
        if i + 1 < n and seq[i] == a and seq[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def _segment_word(word: str, model: SubwordModel) -> tuple[str, ...]:
    cached = model._word_cache.get(word)
    if cached is not None:
        return cached
    if word in RESERVED:
        pieces: tuple[str, ...] = (word,)
    else:
        seq = [WORD_START]
        for ch in word:
            seq.append(ch if ch in model.alphabet else UNK)
        for pair in model.merges:
            if len(seq) < 2:
                break
            seq = _apply_merge(seq, pair)
        pieces = tuple(seq)
    model._word_cache[word] = pieces
    return pieces


def segment(text: str, model: SubwordModel) -> list[str]:
    """Split text into subword tokens; unknown characters become ⟨unk⟩."""
    tokens: list[str] = []
    for word in text.split():
        tokens.extend(_segment_word(word, model))
    return tokens


def desegment(tokens: Sequence[str], model: SubwordModel) -> str:
    """Rejoin subword tokens into single-spaced text (inverse of segment)."""
    words: list[list[str]] = []
    for tok in tokens:
        if tok in RESERVED:
            words.append([tok])
        elif tok.startswith(WORD_START):
            words.append([tok[len(WORD_START):]])
        elif words:
            words[-1].append(tok)
        else:
            words.append([tok])
    return " ".join("".join(parts) for parts in words)


def encode(tokens: Sequence[str], model: SubwordModel) -> list[int]:
    unk = model.token_to_id[UNK]
    return [model.token_to_id.get(tok, unk) for tok in tokens]


def decode(ids: Sequence[int], model: SubwordModel) -> list[str]:
    return [model.id_to_token[i] for i in ids]


def segment_ids(text: str, model: SubwordModel) -> list[int]:
    return encode(segment(text, model), model)


def ids_to_text(
    ids: Sequence[int], model: SubwordModel, drop: tuple[int, ...] = ()
) -> str:
    """Decode model output ids into text, dropping structural tokens."""
    skip = {PAD_ID, BOS_ID, EOS_ID, *drop}
    keep = [i for i in ids if i not in skip]
    return desegment(decode(keep, model), model)


def save_model(model: SubwordModel, path) -> None:
    """Merge pairs in application order, a blank line, then token/id lines."""
    lines = [f"{a}\t{b}" for a, b in model.merges]
    lines.append("")
    lines.extend(f"{tok}\t{i}" for tok, i in model.token_to_id.items())
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> SubwordModel:
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read().split("\n")
    merges: list[tuple[str, str]] = []
    vocab: dict[str, int] = {}
    in_vocab = False
    for line in raw:
        if not line:
            in_vocab = True
            continue
        left, right = line.split("\t")
        if in_vocab:
            vocab[left] = int(right)
        else:
            merges.append((left, right))
    merged = {a + b for a, b in merges}
    alphabet = {
        tok for tok in vocab
        if tok not in RESERVED and tok not in merged
    }
    model = SubwordModel(merges, alphabet)
    if model.token_to_id != vocab:
        raise ValueError(f"inconsistent subword model file: {path}")
    return model
