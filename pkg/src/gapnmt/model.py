"""Multi-encoder sequence-to-sequence model with global attention.

One bidirectional LSTM encoder per source language feeds a single
attentional decoder. The decoder's initial hidden state is a tanh-squashed
linear fusion of all encoder final hidden states, its initial cell state
is the elementwise sum of the encoder final cells, and at every step the
per-source attention contexts are concatenated with the decoder hidden
state to form the attentional vector, which is also fed back into the
next step's input (input feeding).

Two forward paths share the same parameters: the per-sentence ops below
(used by greedy decoding, tests, and tooling) and a batched path with
padding masks (used for training and bulk translation). The batched path
computes exactly the per-sentence quantities; padded positions never
influence final states, attention contexts, or the loss.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .subword import BOS_ID, EOS_ID, PAD_ID

ATTENTION_MASK_VALUE = -1e30


@dataclass
class EncoderFinalState:
    h: Tensor            # final hidden state, both directions concatenated
    c: Tensor            # final cell state, both directions concatenated
    annotations: Tensor  # [T, d_enc], one attended row per source position


@dataclass
class DecoderState:
    h: Tensor
    c: Tensor
    feed: Tensor  # previous step's attentional vector


@dataclass
class Hypothesis:
    tokens: list[int]  # ends with EOS or at the length cap
    score: float       # sum of per-step log-probabilities


class MultiEncoderModel:
    """Parameter bundle for N encoders plus the shared attentional decoder.

    The decoder state width equals the encoder output width (2 * d_lstm):
    the additive cell-state fusion requires both sides to agree.
    """

    def __init__(
        self,
        src_langs: tuple[str, ...],
        tgt_lang: str,
        src_vocab_sizes: tuple[int, ...],
        tgt_vocab_size: int,
        d_lstm: int,
        embed_dim: int,
        params: dict[str, Tensor],
    ) -> None:
        if len(src_langs) != len(src_vocab_sizes) or not src_langs:
            raise ValueError("need one vocabulary size per source language")
        self.src_langs = tuple(src_langs)
        self.tgt_lang = tgt_lang
        self.src_vocab_sizes = tuple(src_vocab_sizes)
        self.tgt_vocab_size = tgt_vocab_size
        self.d_lstm = d_lstm
        self.d_enc = 2 * d_lstm
        self.d_dec = self.d_enc
        self.embed_dim = embed_dim
        self.params = params

    @property
    def n_sources(self) -> int:
        return len(self.src_langs)

    @classmethod
    def create(
        cls,
        src_langs,
        tgt_lang: str,
        src_vocab_sizes,
        tgt_vocab_size: int,
        d_lstm: int,
        embed_dim: int,
        seed: int,
    ) -> "MultiEncoderModel":
        """Initialize all parameters uniformly in [-0.1, 0.1] from `seed`."""
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        h = d_lstm
        e = embed_dim
        d_enc = 2 * h
        d_dec = d_enc
        n = len(src_langs)

        params: dict[str, Tensor] = {}

        def p(name: str, *shape: int) -> None:
            params[name] = Tensor(rng.uniform(-0.1, 0.1, size=shape))

        for i, v in enumerate(src_vocab_sizes):
            p(f"src{i}.embed", v, e)
            for d in ("fwd", "bwd"):
                p(f"src{i}.{d}.w_x", e, 4 * h)
                p(f"src{i}.{d}.w_h", h, 4 * h)
                p(f"src{i}.{d}.b", 4 * h)
            p(f"src{i}.w_att", d_dec, d_enc)
        p("dec.embed", tgt_vocab_size, e)
        p("dec.w_x", e, 4 * d_dec)
        p("dec.w_f", d_dec, 4 * d_dec)
        p("dec.w_h", d_dec, 4 * d_dec)
        p("dec.b", 4 * d_dec)
        p("w_init", d_dec, n * d_enc)
        p("w_comb", d_dec, d_dec + n * d_enc)
        p("w_out", d_dec, tgt_vocab_size)
        p("b_out", tgt_vocab_size)
        return cls(
            tuple(src_langs), tgt_lang, tuple(src_vocab_sizes), tgt_vocab_size,
            d_lstm, embed_dim, params,
        )

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def clone(self) -> "MultiEncoderModel":
        params = {k: Tensor(v.data.copy()) for k, v in self.params.items()}
        return MultiEncoderModel(
            self.src_langs, self.tgt_lang, self.src_vocab_sizes,
            self.tgt_vocab_size, self.d_lstm, self.embed_dim, params,
        )


# ---------------------------------------------------------------------------
# per-sentence forward path


def _lstm_step_1d(x_parts, weights, bias, h, c):
    z = None
    for part, w in zip(x_parts, weights):
        term = ag.matmul(part, w)
        z = term if z is None else ag.add(z, term)
    z = ag.add(z, bias)
    return ag.lstm_cell(z, h, c)


def encode(tokens, source_index: int, model: MultiEncoderModel) -> EncoderFinalState:
    """Run one source's bidirectional encoder over a token-id sequence."""
    if len(tokens) == 0:
        raise ValueError("encode requires a non-empty token sequence")
    p = model.params
    emb = p[f"src{source_index}.embed"]
    xs = [ag.lookup(emb, t) for t in tokens]

    def run(direction: str, seq):
        w_x = p[f"src{source_index}.{direction}.w_x"]
        w_h = p[f"src{source_index}.{direction}.w_h"]
        b = p[f"src{source_index}.{direction}.b"]
        h = ag.zeros((model.d_lstm,))
        c = ag.zeros((model.d_lstm,))
        states = []
        for x in seq:
            h, c = _lstm_step_1d([x, h], [w_x, w_h], b, h, c)
            states.append(h)
        return states, h, c

    fwd_states, fh, fc = run("fwd", xs)
    bwd_states, bh, bc = run("bwd", list(reversed(xs)))
    bwd_states = list(reversed(bwd_states))
    rows = [ag.concat([f, bw], axis=0) for f, bw in zip(fwd_states, bwd_states)]
    annotations = ag.reshape(ag.concat(rows, axis=0), (len(tokens), model.d_enc))
    return EncoderFinalState(
        h=ag.concat([fh, bh], axis=0),
        c=ag.concat([fc, bc], axis=0),
        annotations=annotations,
    )


def init_decoder_multi(finals, model: MultiEncoderModel) -> DecoderState:
    """Fuse encoder finals: h = tanh(W_init.[h_1;..;h_N]), c = sum of cells."""
    if len(finals) != model.n_sources:
        raise ValueError(
            f"expected {model.n_sources} encoder states, got {len(finals)}"
        )
    hcat = ag.concat([f.h for f in finals], axis=0)
    h = ag.tanh(ag.matmul(model.params["w_init"], hcat))
    c = finals[0].c
    for f in finals[1:]:
        c = ag.add(c, f.c)
    return DecoderState(h=h, c=c, feed=ag.zeros((model.d_dec,)))


def attention_weights(
    h_t: Tensor, annotations: Tensor, source_index: int, model: MultiEncoderModel
) -> Tensor:
    """Normalized attention distribution over all positions of one source."""
    u = ag.matmul(h_t, model.params[f"src{source_index}.w_att"])
    scores = ag.matmul(annotations, u)
    return ag.softmax(scores)


def attention_context(
    h_t: Tensor, annotations: Tensor, source_index: int, model: MultiEncoderModel
) -> Tensor:
    """Global bilinear attention over all annotation rows of one source."""
    weights = attention_weights(h_t, annotations, source_index, model)
    return ag.matmul(weights, annotations)


def combine_contexts(h_t: Tensor, contexts, model: MultiEncoderModel) -> Tensor:
    """Attentional vector: tanh(W_comb.[h_t; d_t^1; ..; d_t^N])."""
    if len(contexts) != model.n_sources:
        raise ValueError(
            f"expected {model.n_sources} contexts, got {len(contexts)}"
        )
    cat = ag.concat([h_t, *contexts], axis=0)
    return ag.tanh(ag.matmul(model.params["w_comb"], cat))


def decode_step(
    state: DecoderState, prev_token: int, encoder_states, model: MultiEncoderModel
):
    """One decoder step; returns (new state, logits over target vocab)."""
    p = model.params
    x = ag.lookup(p["dec.embed"], prev_token)
    h, c = _lstm_step_1d(
        [x, state.feed, state.h],
        [p["dec.w_x"], p["dec.w_f"], p["dec.w_h"]],
        p["dec.b"],
        state.h,
        state.c,
    )
    contexts = [
        attention_context(h, enc.annotations, i, model)
        for i, enc in enumerate(encoder_states)
    ]
    htilde = combine_contexts(h, contexts, model)
    logits = ag.add(ag.matmul(htilde, p["w_out"]), p["b_out"])
    return DecoderState(h=h, c=c, feed=htilde), logits


def translate(sources, model: MultiEncoderModel, max_len: int) -> Hypothesis:
    """Greedy argmax decoding from BOS until EOS or `max_len` tokens."""
    if len(sources) != model.n_sources:
        raise ValueError(
            f"expected {model.n_sources} source sequences, got {len(sources)}"
        )
    encs = [encode(toks, i, model) for i, toks in enumerate(sources)]
    state = init_decoder_multi(encs, model)
    tokens: list[int] = []
    score = 0.0
    prev = BOS_ID
    while len(tokens) < max_len:
        state, logits = decode_step(state, prev, encs, model)
        logp = _log_softmax(logits.data)
        nxt = int(np.argmax(logp))
        tokens.append(nxt)
        score += float(logp[nxt])
        if nxt == EOS_ID:
            break
        prev = nxt
    return Hypothesis(tokens=tokens, score=score)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sentence_loss(model: MultiEncoderModel, sources, target) -> Tensor:
    """Teacher-forced negative log-likelihood of one target sequence,
    summed over tokens (including EOS)."""
    encs = [encode(toks, i, model) for i, toks in enumerate(sources)]
    state = init_decoder_multi(encs, model)
    loss = None
    prev = BOS_ID
    for label in [*target, EOS_ID]:
        state, logits = decode_step(state, prev, encs, model)
        step = ag.cross_entropy(logits, label)
        loss = step if loss is None else ag.add(loss, step)
        prev = label
    return loss


# ---------------------------------------------------------------------------
# batched forward path


@dataclass
class Batch:
    """Padded token matrices for one mini-batch.

    src_tokens[i] and src_mask[i] are [B, T_i]; target matrices are
    [B, T_t] with tgt_in = BOS-prefixed inputs and tgt_out the labels
    (sentence plus EOS). Masks are 1.0 on real positions, 0.0 on padding.
    """

    src_tokens: list[np.ndarray]
    src_mask: list[np.ndarray]
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    tgt_mask: np.ndarray

    @property
    def size(self) -> int:
        return self.tgt_in.shape[0]

    @property
    def token_count(self) -> float:
        return float(self.tgt_mask.sum())


def _encode_batch(model: MultiEncoderModel, source_index: int, tokens, mask):
    p = model.params
    b, t_len = tokens.shape
    hdim = model.d_lstm
    tok_tmajor = np.ascontiguousarray(tokens.T).reshape(-1)
    emb = ag.lookup_rows(p[f"src{source_index}.embed"], tok_tmajor)

    def run(direction: str, order):
        w_x = p[f"src{source_index}.{direction}.w_x"]
        w_h = p[f"src{source_index}.{direction}.w_h"]
        bias = p[f"src{source_index}.{direction}.b"]
        xw = ag.matmul(emb, w_x)
        h = ag.zeros((b, hdim))
        c = ag.zeros((b, hdim))
        states = [None] * t_len
        for t in order:
            z = ag.add_bias(
                ag.add(ag.narrow(xw, 0, t * b, (t + 1) * b), ag.matmul(h, w_h)),
                bias,
            )
            h, c = ag.lstm_cell(z, h, c, mask[:, t])
            states[t] = h
        return states, h, c

    fwd_states, fh, fc = run("fwd", range(t_len))
    bwd_states, bh, bc = run("bwd", range(t_len - 1, -1, -1))
    rows = [
        ag.concat([fwd_states[t], bwd_states[t]], axis=1) for t in range(t_len)
    ]
    stacked = ag.reshape(ag.concat(rows, axis=0), (t_len, b, model.d_enc))
    annotations = ag.transpose(stacked, (1, 0, 2))
    h_fin = ag.concat([fh, bh], axis=1)
    c_fin = ag.concat([fc, bc], axis=1)
    return h_fin, c_fin, annotations


def _attention_bias(mask: np.ndarray) -> Tensor:
    """Additive score bias: 0 on real positions, a huge negative on padding,
    so padded annotations get exactly zero attention weight."""
    return Tensor(np.where(mask > 0.0, 0.0, ATTENTION_MASK_VALUE))


def _attend_batch(h, annotations, att_mask, w_att):
    u = ag.matmul(h, w_att)
    return ag.attention_pool(annotations, u, att_mask)


def batch_loss(model: MultiEncoderModel, batch: Batch) -> Tensor:
    """Masked cross-entropy of a batch, summed over tokens and sentences."""
    p = model.params
    b = batch.size
    encoded = [
        _encode_batch(model, i, batch.src_tokens[i], batch.src_mask[i])
        for i in range(model.n_sources)
    ]
    att_masks = [_attention_bias(m) for m in batch.src_mask]
    hcat = ag.concat([e[0] for e in encoded], axis=1)
    h = ag.tanh(ag.matmul(hcat, ag.transpose(p["w_init"])))
    c = encoded[0][1]
    for e in encoded[1:]:
        c = ag.add(c, e[1])
    feed = ag.zeros((b, model.d_dec))

    w_comb_t = ag.transpose(p["w_comb"])
    # single recurrent GEMM per step over [feed; h]
    w_fh = ag.concat([p["dec.w_f"], p["dec.w_h"]], axis=0)
    t_len = batch.tgt_in.shape[1]
    tok_tmajor = np.ascontiguousarray(batch.tgt_in.T).reshape(-1)
    emb = ag.lookup_rows(p["dec.embed"], tok_tmajor)
    xw = ag.matmul(emb, p["dec.w_x"])

    loss = None
    for t in range(t_len):
        z = ag.add_bias(
            ag.add(
                ag.narrow(xw, 0, t * b, (t + 1) * b),
                ag.matmul(ag.concat([feed, h], axis=1), w_fh),
            ),
            p["dec.b"],
        )
        h, c = ag.lstm_cell(z, h, c)
        contexts = [
            _attend_batch(
                h, encoded[i][2], att_masks[i], p[f"src{i}.w_att"]
            )
            for i in range(model.n_sources)
        ]
        htilde = ag.tanh(ag.matmul(ag.concat([h, *contexts], axis=1), w_comb_t))
        logits = ag.add_bias(ag.matmul(htilde, p["w_out"]), p["b_out"])
        step = ag.cross_entropy_rows(logits, batch.tgt_out[:, t], batch.tgt_mask[:, t])
        loss = step if loss is None else ag.add(loss, step)
        feed = htilde
    return loss


def translate_batch(model: MultiEncoderModel, rows, max_lens) -> list[Hypothesis]:
    """Greedy-decode many source tuples at once (forward only, no tape).

    `rows` is a sequence of N-tuples of token-id lists; `max_lens` gives
    the per-row output cap. Produces the same hypotheses as `translate`
    row by row.
    """
    n_rows = len(rows)
    if n_rows == 0:
        return []
    p = model.params
    encoded = []
    att_masks = []
    for i in range(model.n_sources):
        seqs = [r[i] for r in rows]
        t_max = max(len(s) for s in seqs)
        toks = np.full((n_rows, t_max), PAD_ID, dtype=np.int64)
        mask = np.zeros((n_rows, t_max))
        for r, s in enumerate(seqs):
            toks[r, : len(s)] = s
            mask[r, : len(s)] = 1.0
        encoded.append(_encode_batch(model, i, toks, mask))
        att_masks.append(_attention_bias(mask))

    hcat = ag.concat([e[0] for e in encoded], axis=1)
    h = ag.tanh(ag.matmul(hcat, ag.transpose(p["w_init"])))
    c = encoded[0][1]
    for e in encoded[1:]:
        c = ag.add(c, e[1])
    feed = ag.zeros((n_rows, model.d_dec))
    w_comb_t = ag.transpose(p["w_comb"])
    w_fh = ag.concat([p["dec.w_f"], p["dec.w_h"]], axis=0)

    caps = np.asarray(max_lens, dtype=np.int64)
    prev = np.full(n_rows, BOS_ID, dtype=np.int64)
    out_tokens: list[list[int]] = [[] for _ in range(n_rows)]
    scores = np.zeros(n_rows)
    done = caps <= 0
    step = 0
    while not done.all():
        x = ag.lookup_rows(p["dec.embed"], prev)
        z = ag.add_bias(
            ag.add(
                ag.matmul(x, p["dec.w_x"]),
                ag.matmul(ag.concat([feed, h], axis=1), w_fh),
            ),
            p["dec.b"],
        )
        h, c = ag.lstm_cell(z, h, c)
        contexts = [
            _attend_batch(h, encoded[i][2], att_masks[i], p[f"src{i}.w_att"])
            for i in range(model.n_sources)
        ]
        htilde = ag.tanh(ag.matmul(ag.concat([h, *contexts], axis=1), w_comb_t))
        logits = ag.add_bias(ag.matmul(htilde, p["w_out"]), p["b_out"])
        logp = _log_softmax(logits.data)
        nxt = logp.argmax(axis=1)
        for r in range(n_rows):
            if done[r]:
                continue
            tok = int(nxt[r])
            out_tokens[r].append(tok)
            scores[r] += float(logp[r, tok])
            if tok == EOS_ID or len(out_tokens[r]) >= caps[r]:
                done[r] = True
        prev = np.where(done, PAD_ID, nxt)
        feed = htilde
        step += 1
    return [
        Hypothesis(tokens=out_tokens[r], score=float(scores[r]))
        for r in range(n_rows)
    ]


# ---------------------------------------------------------------------------
# checkpoints: directory of named parameter tensors plus metadata


def save_checkpoint(model: MultiEncoderModel, path, vocab_files=None) -> None:
    os.makedirs(path, exist_ok=True)
    meta = [
        f"n_sources={model.n_sources}",
        f"d_lstm={model.d_lstm}",
        f"d_enc={model.d_enc}",
        f"d_dec={model.d_dec}",
        f"embed_dim={model.embed_dim}",
        f"src_langs={','.join(model.src_langs)}",
        f"tgt_lang={model.tgt_lang}",
        f"src_vocab_sizes={','.join(str(v) for v in model.src_vocab_sizes)}",
        f"tgt_vocab_size={model.tgt_vocab_size}",
    ]
    for lang, fname in (vocab_files or {}).items():
        meta.append(f"vocab_file.{lang}={fname}")
    with open(os.path.join(path, "meta.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(meta) + "\n")
    for name, tensor in model.params.items():
        ag.save_tensor(tensor, os.path.join(path, name + ".bin"))


def load_checkpoint(path) -> tuple[MultiEncoderModel, dict]:
    meta: dict[str, str] = {}
    with open(os.path.join(path, "meta.txt"), "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                k, v = line.split("=", 1)
                meta[k] = v
    src_langs = tuple(meta["src_langs"].split(","))
    src_vocab_sizes = tuple(int(x) for x in meta["src_vocab_sizes"].split(","))
    model = MultiEncoderModel.create(
        src_langs,
        meta["tgt_lang"],
        src_vocab_sizes,
        int(meta["tgt_vocab_size"]),
        int(meta["d_lstm"]),
        int(meta["embed_dim"]),
        seed=0,
    )
    for name in model.params:
        model.params[name] = ag.load_tensor(os.path.join(path, name + ".bin"))
    return model, meta
