import math

import numpy as np
import pytest

from gapnmt import corpus as cp
from gapnmt import model as md
from gapnmt import subword as sw
from gapnmt import trainer as tr
from gapnmt.subword import EOS_ID


def tiny_model(seed=5, v=10, d_lstm=2, n_sources=2):
    return md.MultiEncoderModel.create(
        tuple(f"s{i}" for i in range(n_sources)), "t",
        (v,) * n_sources, v, d_lstm, 4, seed=seed,
    )


# ---------------------------------------------------------------------------
# adam


def test_adam_zero_gradient_keeps_params():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    grads = {"w": np.zeros(3)}
    state = tr.AdamState()
    before = params["w"].copy()
    for t in range(1, 6):
        tr.adam_step(params, grads, state, lr=0.1, t=t)
    np.testing.assert_array_equal(params["w"], before)


def test_adam_first_step_closed_form():
    # t=1: m_hat = g, v_hat = g^2, update = lr*g/(|g|+eps)
    g = 0.37
    params = {"w": np.array([2.0])}
    state = tr.AdamState()
    tr.adam_step(params, {"w": np.array([g])}, state, lr=0.01, t=1)
    expected = 2.0 - 0.01 * g / (abs(g) + tr.ADAM_EPS)
    assert params["w"][0] == pytest.approx(expected, rel=1e-12)


def test_adam_constant_gradient_step_magnitude():
    # constant g makes both bias-corrected moments exact, so every update
    # has magnitude lr*|g|/(|g|+eps), approaching lr
    g = np.array([0.5, -2.0])
    params = {"w": np.array([0.0, 0.0])}
    state = tr.AdamState()
    prev = params["w"].copy()
    lr = 1e-3
    for t in range(1, 101):
        tr.adam_step(params, {"w": g.copy()}, state, lr, t)
        step = params["w"] - prev
        np.testing.assert_allclose(
            np.abs(step), lr * np.abs(g) / (np.abs(g) + tr.ADAM_EPS), rtol=1e-9
        )
        assert np.sign(step[0]) == -np.sign(g[0])
        prev = params["w"].copy()


def test_adam_shape_mismatch():
    state = tr.AdamState()
    with pytest.raises(ValueError):
        tr.adam_step({"w": np.zeros(3)}, {"w": np.zeros(4)}, state, 0.1, 1)


# ---------------------------------------------------------------------------
# clipping


def test_clip_boundary_unchanged():
    grads = {"g": np.array([3.0, 4.0])}
    tr.clip_gradients(grads, 5.0)
    np.testing.assert_array_equal(grads["g"], [3.0, 4.0])


def test_clip_scales_down():
    grads = {"g": np.array([6.0, 8.0])}
    tr.clip_gradients(grads, 5.0)
    np.testing.assert_allclose(grads["g"], [3.0, 4.0], rtol=1e-12)


def test_clip_zero_grads():
    grads = {"g": np.zeros(4)}
    tr.clip_gradients(grads, 5.0)
    np.testing.assert_array_equal(grads["g"], np.zeros(4))


def test_clip_global_norm_bound():
    rng = np.random.default_rng(8)
    for _ in range(20):
        grads = {
            "a": rng.normal(size=(3, 4)) * rng.uniform(0, 10),
            "b": rng.normal(size=7) * rng.uniform(0, 10),
        }
        tr.clip_gradients(grads, 5.0)
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        assert norm <= 5.0 + 1e-9


# ---------------------------------------------------------------------------
# batching


def rand_examples(n, rng, v=10, n_sources=2, max_len=5):
    out = []
    for _ in range(n):
        srcs = tuple(
            list(rng.integers(5, v, size=rng.integers(1, max_len + 1)))
            for _ in range(n_sources)
        )
        tgt = list(rng.integers(5, v, size=rng.integers(1, max_len + 1)))
        out.append((srcs, tgt))
    return out


def test_batchify_sizes():
    rng = np.random.default_rng(0)
    examples = rand_examples(10, rng)
    batches = tr.batchify(examples, 3, seed=1)
    assert [b.size for b in batches] == [3, 3, 3, 1]


def test_batchify_no_padding_when_equal_lengths():
    examples = [((([6, 7],) * 2), [8, 9]) for _ in range(4)]
    (batch,) = tr.batchify(examples, 4, seed=0)
    for m in batch.src_mask:
        assert m.all()
    assert batch.tgt_mask.all()  # tgt width is len+1 for EOS, all real


def test_batchify_deterministic():
    rng = np.random.default_rng(1)
    examples = rand_examples(9, rng)
    b1 = tr.batchify(examples, 4, seed=7)
    b2 = tr.batchify(examples, 4, seed=7)
    for x, y in zip(b1, b2):
        assert np.array_equal(x.tgt_in, y.tgt_in)
        assert all(np.array_equal(a, b) for a, b in zip(x.src_tokens, y.src_tokens))


def test_batchify_mask_semantics():
    examples = [(([6],), [7])]  # one source, lengths 1
    (batch,) = tr.batchify(examples, 1, seed=0)
    assert batch.tgt_in[0, 0] == sw.BOS_ID
    assert batch.tgt_out[0, 0] == 7
    assert batch.tgt_out[0, 1] == sw.EOS_ID
    assert batch.tgt_mask[0].tolist() == [1.0, 1.0]


def test_total_loss_batch_size_invariant():
    rng = np.random.default_rng(3)
    examples = rand_examples(13, rng)
    m = tiny_model()
    totals = [tr.corpus_nll(m, examples, bs) for bs in (1, 3, 5, 13)]
    for t in totals[1:]:
        assert abs(t - totals[0]) / abs(totals[0]) < 1e-8


# ---------------------------------------------------------------------------
# make_examples


def test_make_examples_requires_present_sources():
    rows = [
        (cp.Cell("a b"), cp.MISSING, cp.Cell("x y")),
        (cp.Cell("c"), cp.Cell("d"), cp.Cell("z")),
    ]
    corpus = cp.MultiCorpus(("en", "xx", "yy"), rows)
    models = {
        lang: sw.train_bpe(["a b c d x y z"], 3) for lang in ("en", "xx", "yy")
    }
    with pytest.raises(cp.CorpusError, match="row 0"):
        tr.make_examples(corpus, ["en", "xx"], "yy", models)
    filled = cp.fill_null(corpus, "xx")
    examples = tr.make_examples(filled, ["en", "xx"], "yy", models)
    assert len(examples) == 2
    assert examples[0][0][1] == [sw.NULL_ID]


def test_make_examples_skips_missing_targets():
    rows = [
        (cp.Cell("a"), cp.Cell("b"), cp.MISSING),
        (cp.Cell("a"), cp.Cell("b"), cp.Cell("c")),
    ]
    corpus = cp.MultiCorpus(("en", "xx", "yy"), rows)
    models = {lang: sw.train_bpe(["a b c"], 0) for lang in ("en", "xx", "yy")}
    examples = tr.make_examples(corpus, ["en", "xx"], "yy", models)
    assert len(examples) == 1


# ---------------------------------------------------------------------------
# training loop


def test_train_memorizes_single_sentence():
    m = tiny_model(seed=11, d_lstm=4)
    example = (([5, 6, 7], [8, 9]), [6, 8, 5])
    config = tr.TrainConfig(
        d_lstm=4, d_dec=8, embed_dim=4, batch_size=1, patience=300,
        max_epochs=200, seed=1, learning_rate=0.1,
    )
    best, report = tr.train(m, [example], [example], config)
    assert report.epochs[-1][1] < 0.1
    hyp = md.translate([[5, 6, 7], [8, 9]], best, max_len=10)
    assert hyp.tokens[:-1] == [6, 8, 5]
    assert hyp.tokens[-1] == EOS_ID


def test_train_early_stopping_patience_one():
    # lr=0 never improves on epoch 1, so patience=1 stops after epoch 2
    rng = np.random.default_rng(5)
    examples = rand_examples(4, rng)
    m = tiny_model(seed=3)
    config = tr.TrainConfig(
        d_lstm=2, d_dec=4, embed_dim=4, batch_size=2, patience=1,
        max_epochs=50, seed=2, learning_rate=1e-30,
    )
    best, report = tr.train(m, examples, examples, config)
    assert report.best_epoch == 1
    assert len(report.epochs) == 2


def test_train_returns_best_epoch_checkpoint():
    rng = np.random.default_rng(9)
    examples = rand_examples(6, rng)
    valid = rand_examples(3, rng)
    m = tiny_model(seed=7)
    config = tr.TrainConfig(
        d_lstm=2, d_dec=4, embed_dim=4, batch_size=3, patience=3,
        max_epochs=8, seed=4, learning_rate=0.05,
    )
    best, report = tr.train(m, examples, valid, config)
    nlls = [nll for _, _, nll in report.epochs]
    assert report.best_valid_nll == min(nlls)
    got = tr.corpus_nll(best, valid) / len(valid)
    assert got == pytest.approx(report.best_valid_nll, rel=1e-12)


def test_train_deterministic():
    rng = np.random.default_rng(13)
    examples = rand_examples(6, rng)
    config = tr.TrainConfig(
        d_lstm=2, d_dec=4, embed_dim=4, batch_size=2, patience=2,
        max_epochs=4, seed=5, learning_rate=0.01,
    )
    r1 = tr.train(tiny_model(seed=1), examples, examples, config)[1]
    r2 = tr.train(tiny_model(seed=1), examples, examples, config)[1]
    assert r1.lines() == r2.lines()


def test_train_divergence_names_batch():
    rng = np.random.default_rng(17)
    examples = rand_examples(3, rng)
    m = tiny_model(seed=2)
    m.params["src0.embed"].data[...] = 1e200
    m.params["src0.fwd.w_x"].data[...] = 1e200
    config = tr.TrainConfig(
        d_lstm=2, d_dec=4, embed_dim=4, batch_size=3, patience=2,
        max_epochs=2, seed=6,
    )
    with pytest.raises(tr.DivergenceError, match="epoch 1, batch 0"):
        tr.train(m, examples, examples, config)


def test_train_config_validation():
    with pytest.raises(ValueError):
        tr.TrainConfig(d_lstm=4, d_dec=4)
    with pytest.raises(ValueError):
        tr.TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        tr.TrainConfig(learning_rate=-1.0)


def test_report_serialization(tmp_path):
    report = tr.TrainReport(epochs=[(1, 2.5, 3.25), (2, 1.75, 2.125)])
    path = tmp_path / "report.tsv"
    tr.save_report(report, path)
    assert path.read_text() == "1\t2.5\t3.25\n2\t1.75\t2.125\n"
