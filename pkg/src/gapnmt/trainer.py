"""Mini-batch training with Adam, gradient clipping, and early stopping.

The per-batch objective is the padding-masked cross-entropy summed over
tokens and divided by the number of sentences in the batch, which makes
the total corpus loss independent of batch size. Validation tracks the
mean per-sentence negative log-likelihood; the checkpoint with the best
validation value is returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import corpus as cp
from . import subword as sw
from .autograd import Graph
from .model import Batch, MultiEncoderModel, batch_loss, save_checkpoint

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, batch_index: int, detail: str) -> None:
        super().__init__(
            f"training diverged at epoch {epoch}, batch {batch_index}: {detail}"
        )
        self.epoch = epoch
        self.batch_index = batch_index


@dataclass
class TrainConfig:
    d_lstm: int = 64
    d_dec: int = 128
    embed_dim: int = 64
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    batch_size: int = 32
    patience: int = 5
    max_epochs: int = 30
    seed: int = 13

    def __post_init__(self) -> None:
        for name in ("d_lstm", "d_dec", "embed_dim", "batch_size", "patience",
                     "max_epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ValueError("learning_rate and clip_norm must be positive")
        if self.d_dec != 2 * self.d_lstm:
            # additive cell-state fusion ties the decoder width to the
            # concatenated bidirectional encoder width
            raise ValueError(
                f"d_dec must equal 2*d_lstm ({2 * self.d_lstm}), got {self.d_dec}"
            )


@dataclass
class TrainReport:
    epochs: list[tuple[int, float, float]] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_nll: float = math.inf
    checkpoint_path: str | None = None

    def lines(self) -> list[str]:
        return [
            f"{e}\t{train_loss!r}\t{valid_nll!r}"
            for e, train_loss, valid_nll in self.epochs
        ]


def save_report(report: TrainReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(report.lines()) + "\n")


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """First/second moment estimates keyed by parameter name."""

    def __init__(self) -> None:
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def ensure(self, name: str, shape) -> None:
        if name not in self.m:
            self.m[name] = np.zeros(shape)
            self.v[name] = np.zeros(shape)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    t: int,
) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update, applied in place; t counts from 1."""
    if t < 1:
        raise ValueError(f"adam step count must be >= 1, got {t}")
    b1c = 1.0 - ADAM_BETA1 ** t
    b2c = 1.0 - ADAM_BETA2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name} shape {p.shape}"
            )
        state.ensure(name, p.shape)
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        p -= lr * (m / b1c) / (np.sqrt(v / b2c) + ADAM_EPS)
    return params


def clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> dict:
    """Scale all gradients so the global L2 norm is at most clip_norm."""
    if clip_norm <= 0:
        raise ValueError(f"clip_norm must be positive, got {clip_norm}")
    sq = 0.0
    for g in grads.values():
        flat = g.reshape(-1)
        sq += float(np.dot(flat, flat))
    norm = math.sqrt(sq)
    if norm > clip_norm:
        factor = clip_norm / norm
        for g in grads.values():
            g *= factor
    return grads


# ---------------------------------------------------------------------------
# data preparation


Example = tuple[tuple[list[int], ...], list[int]]


def make_examples(
    corpus: cp.MultiCorpus,
    src_langs,
    tgt_lang: str,
    subword_models: dict[str, sw.SubwordModel],
) -> list[Example]:
    """Segment corpus rows into token-id training examples.

    Keeps rows whose target cell carries original or pseudo text; all
    source cells must be present (run fill_null or an augmentation first).
    An empty source or target sentence encodes as a single ⟨unk⟩ so that
    encoder inputs are never empty.
    """
    src_idx = [corpus.lang_index(l) for l in src_langs]
    tgt_idx = corpus.lang_index(tgt_lang)
    ok = (cp.Provenance.ORIGINAL, cp.Provenance.PSEUDO)
    examples: list[Example] = []
    for r, row in enumerate(corpus.rows):
        tgt_cell = row[tgt_idx]
        if not tgt_cell.present or tgt_cell.provenance not in ok:
            continue
        sources = []
        for lang, i in zip(src_langs, src_idx):
            cell = row[i]
            if not cell.present:
                raise cp.CorpusError(
                    f"row {r}: source language {lang!r} is missing; "
                    "fill it before training"
                )
            ids = sw.segment_ids(cell.text, subword_models[lang])
            sources.append(ids if ids else [sw.UNK_ID])
        target = sw.segment_ids(tgt_cell.text, subword_models[tgt_lang])
        examples.append((tuple(sources), target if target else [sw.UNK_ID]))
    return examples


def batchify(examples: list[Example], batch_size: int, seed) -> list[Batch]:
    """Deterministic shuffle, then fixed-size padded batches."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(examples))
    shuffled = [examples[i] for i in order]
    batches = []
    for start in range(0, len(shuffled), batch_size):
        chunk = shuffled[start:start + batch_size]
        batches.append(_pad_batch(chunk))
    return batches


def _pad_batch(chunk: list[Example]) -> Batch:
    b = len(chunk)
    n_sources = len(chunk[0][0])
    src_tokens = []
    src_mask = []
    for i in range(n_sources):
        seqs = [ex[0][i] for ex in chunk]
        t_max = max(len(s) for s in seqs)
        toks = np.full((b, t_max), sw.PAD_ID, dtype=np.int64)
        mask = np.zeros((b, t_max))
        for r, s in enumerate(seqs):
            toks[r, : len(s)] = s
            mask[r, : len(s)] = 1.0
        src_tokens.append(toks)
        src_mask.append(mask)
    tgts = [ex[1] for ex in chunk]
    t_max = max(len(t) for t in tgts) + 1  # room for EOS
    tgt_in = np.full((b, t_max), sw.PAD_ID, dtype=np.int64)
    tgt_out = np.full((b, t_max), sw.PAD_ID, dtype=np.int64)
    tgt_mask = np.zeros((b, t_max))
    for r, t in enumerate(tgts):
        k = len(t)
        tgt_in[r, 0] = sw.BOS_ID
        tgt_in[r, 1:k + 1] = t
        tgt_out[r, :k] = t
        tgt_out[r, k] = sw.EOS_ID
        tgt_mask[r, :k + 1] = 1.0
    return Batch(src_tokens, src_mask, tgt_in, tgt_out, tgt_mask)


def corpus_nll(model: MultiEncoderModel, examples: list[Example],
               batch_size: int = 64) -> float:
    """Total teacher-forced NLL over a dataset (forward only)."""
    total = 0.0
    for start in range(0, len(examples), batch_size):
        batch = _pad_batch(examples[start:start + batch_size])
        total += batch_loss(model, batch).item()
    return total


# ---------------------------------------------------------------------------
# training loop


def train(
    model: MultiEncoderModel,
    train_examples: list[Example],
    valid_examples: list[Example],
    config: TrainConfig,
    checkpoint_dir=None,
    vocab_files=None,
) -> tuple[MultiEncoderModel, TrainReport]:
    """Run epochs until early stopping; return the best checkpoint.

    Stops after `patience` epochs without validation improvement or at
    `max_epochs`. With a fixed config seed the whole run, including the
    report, is bit-reproducible on one thread.
    """
    if not train_examples or not valid_examples:
        raise ValueError("training and validation sets must be non-empty")
    state = AdamState()
    report = TrainReport()
    best_params: dict[str, np.ndarray] | None = None
    step = 0
    since_best = 0
    for epoch in range(1, config.max_epochs + 1):
        batches = batchify(
            train_examples,
            config.batch_size,
            np.random.SeedSequence([config.seed, 2, epoch]),
        )
        epoch_loss = 0.0
        for bi, batch in enumerate(batches):
            model.zero_grads()
            graph = Graph()
            try:
                with graph:
                    loss = batch_loss(model, batch)
                graph.backward(loss)
            except FloatingPointError as exc:
                raise DivergenceError(epoch, bi, str(exc)) from exc
            epoch_loss += loss.item()
            grads = {
                name: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for name, t in model.params.items()
            }
            for g in grads.values():
                g /= batch.size
            clip_gradients(grads, config.clip_norm)
            step += 1
            adam_step(
                {name: t.data for name, t in model.params.items()},
                grads, state, config.learning_rate, step,
            )
        train_loss = epoch_loss / len(train_examples)
        valid_nll = corpus_nll(model, valid_examples) / len(valid_examples)
        report.epochs.append((epoch, train_loss, valid_nll))
        if valid_nll < report.best_valid_nll:
            report.best_valid_nll = valid_nll
            report.best_epoch = epoch
            best_params = {k: t.data.copy() for k, t in model.params.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    best = model.clone()
    for name, data in best_params.items():
        best.params[name].data = data
    best.zero_grads()
    if checkpoint_dir is not None:
        save_checkpoint(best, checkpoint_dir, vocab_files)
        report.checkpoint_path = str(checkpoint_dir)
    return best, report
