import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapnmt import autograd as ag
from gapnmt.autograd import Graph, Tensor


def fd_gradients(build_loss, params, step=1e-3):
    """Central finite differences of build_loss() w.r.t. each param's data."""
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = build_loss().item()
            flat[i] = orig - step
            fm = build_loss().item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * step)
        grads.append(g)
    return grads


def assert_close_rel(a, b, rtol=1e-4):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    rel = np.abs(a - b) / denom
    assert rel.max() < rtol, f"max rel err {rel.max()}"


def check_op_gradients(build_loss, params, rtol=1e-4):
    """Analytic grads from one backward pass must match central differences."""
    for p in params:
        p.zero_grad()
    g = Graph()
    with g:
        loss = build_loss()
    g.backward(loss)
    analytic = [
        p.grad if p.grad is not None else np.zeros_like(p.data) for p in params
    ]
    numeric = fd_gradients(build_loss, params)
    for a, n in zip(analytic, numeric):
        assert_close_rel(a, n, rtol)


def rand(rng, *shape):
    return Tensor(rng.uniform(-2.0, 2.0, size=shape))


RNG = np.random.default_rng(20240)


# ---------------------------------------------------------------------------
# forward oracles


def test_matmul_identity():
    a = ag.tensor([[1.0, 2.0], [3.0, 4.0]])
    eye = ag.tensor(np.eye(2))
    out = ag.matmul(eye, a)
    np.testing.assert_array_equal(out.data, a.data)


def test_matmul_hand_oracle():
    a = ag.tensor([[1.0, 2.0], [3.0, 4.0]])
    b = ag.tensor([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(ag.matmul(a, b).data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_shape_error_names_shapes():
    a = ag.zeros((2, 3))
    b = ag.zeros((2, 3))
    with pytest.raises(ag.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ag.matmul(a, b)


def test_elementwise_trivial():
    np.testing.assert_array_equal(
        ag.add(ag.tensor([1.0, 2.0]), ag.tensor([3.0, 4.0])).data, [4.0, 6.0]
    )
    np.testing.assert_array_equal(ag.tanh(ag.zeros((3,))).data, [0.0, 0.0, 0.0])
    assert ag.sigmoid(ag.tensor([0.0])).data[0] == 0.5


def test_elementwise_shape_mismatch():
    with pytest.raises(ag.ShapeError):
        ag.add(ag.zeros((2,)), ag.zeros((3,)))
    with pytest.raises(ag.ShapeError):
        ag.mul(ag.zeros((2, 2)), ag.zeros((4,)))


def test_concat_basics():
    out = ag.concat([ag.tensor([1.0, 2.0]), ag.tensor([3.0])], axis=0)
    np.testing.assert_array_equal(out.data, [1.0, 2.0, 3.0])
    three = ag.concat([ag.zeros((5,))] * 3, axis=0)
    assert three.shape == (15,)
    with pytest.raises(ag.ShapeError):
        ag.concat([ag.zeros((2, 2)), ag.zeros((3, 3))], axis=0)


def test_concat_backward_all_ones():
    a, b = ag.zeros((2,)), ag.zeros((3,))
    g = Graph()
    with g:
        loss = ag.sum_all(ag.concat([a, b], axis=0))
    g.backward(loss)
    np.testing.assert_array_equal(a.grad, np.ones(2))
    np.testing.assert_array_equal(b.grad, np.ones(3))


def test_softmax_trivial():
    np.testing.assert_allclose(ag.softmax(ag.tensor([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_array_equal(ag.softmax(ag.tensor([3.7])).data, [1.0])
    big = ag.softmax(ag.tensor([1000.0, 0.0])).data
    assert np.isfinite(big).all()
    assert big[0] > 0.999999 and big[1] < 1e-6


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_sums_to_one(xs):
    out = ag.softmax(ag.tensor(xs)).data
    assert (out > 0).all()
    assert abs(out.sum() - 1.0) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=2, max_size=8),
    st.randoms(use_true_random=False),
)
def test_softmax_permutation_equivariant(xs, rnd):
    perm = list(range(len(xs)))
    rnd.shuffle(perm)
    base = ag.softmax(ag.tensor(xs)).data
    permed = ag.softmax(ag.tensor([xs[i] for i in perm])).data
    np.testing.assert_allclose(permed, base[perm], atol=1e-12)


def test_lookup_identity_table():
    out = ag.lookup(ag.tensor(np.eye(3)), 1)
    np.testing.assert_array_equal(out.data, [0.0, 1.0, 0.0])
    with pytest.raises(IndexError):
        ag.lookup(ag.tensor(np.eye(3)), 3)


def test_lookup_same_index_doubles_grad():
    table = rand(RNG, 4, 3)
    g = Graph()
    with g:
        a = ag.lookup(table, 2)
        b = ag.lookup(table, 2)
        loss = ag.sum_all(ag.add(a, b))
    g.backward(loss)
    np.testing.assert_array_equal(table.grad[2], np.full(3, 2.0))
    np.testing.assert_array_equal(table.grad[0], np.zeros(3))


def test_cross_entropy_uniform():
    logits = ag.zeros((4,))
    for t in range(4):
        assert ag.cross_entropy(logits, t).item() == pytest.approx(math.log(4.0))


def test_cross_entropy_confident():
    logits = ag.tensor([500.0, 0.0, 0.0])
    assert ag.cross_entropy(logits, 0).item() == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(IndexError):
        ag.cross_entropy(logits, 5)


def test_overflow_is_an_error():
    huge = ag.tensor([1e200, 1e200])
    with pytest.raises(FloatingPointError):
        ag.mul(huge, huge)


# ---------------------------------------------------------------------------
# gradient checks: every op against central finite differences


def test_grad_matmul_2d_2d():
    a, b = rand(RNG, 3, 4), rand(RNG, 4, 2)
    check_op_gradients(lambda: ag.sum_all(ag.matmul(a, b)), [a, b])


def test_grad_matmul_vec_cases():
    a, b = rand(RNG, 4), rand(RNG, 4, 3)
    check_op_gradients(lambda: ag.sum_all(ag.matmul(a, b)), [a, b])
    c, d = rand(RNG, 3, 4), rand(RNG, 4)
    check_op_gradients(lambda: ag.sum_all(ag.matmul(c, d)), [c, d])


def test_grad_matmul_batched():
    a, b = rand(RNG, 2, 3, 4), rand(RNG, 2, 4, 2)
    check_op_gradients(lambda: ag.sum_all(ag.matmul(a, b)), [a, b])


def test_grad_add_mul_scale():
    a, b = rand(RNG, 2, 3), rand(RNG, 2, 3)
    check_op_gradients(
        lambda: ag.sum_all(ag.mul(ag.add(a, b), ag.scale(a, 0.7))), [a, b]
    )


def test_grad_add_bias():
    a, b = rand(RNG, 3, 4), rand(RNG, 4)
    check_op_gradients(
        lambda: ag.sum_all(ag.tanh(ag.add_bias(a, b))), [a, b]
    )


def test_grad_tanh_sigmoid():
    a = rand(RNG, 5)
    check_op_gradients(lambda: ag.sum_all(ag.tanh(a)), [a])
    check_op_gradients(lambda: ag.sum_all(ag.sigmoid(a)), [a])


def test_grad_concat_axes():
    a, b = rand(RNG, 2, 3), rand(RNG, 2, 2)
    check_op_gradients(
        lambda: ag.sum_all(ag.tanh(ag.concat([a, b], axis=1))), [a, b]
    )
    c, d = rand(RNG, 2, 3), rand(RNG, 1, 3)
    check_op_gradients(
        lambda: ag.sum_all(ag.tanh(ag.concat([c, d], axis=0))), [c, d]
    )


def test_grad_narrow_reshape_transpose():
    a = rand(RNG, 3, 4)
    check_op_gradients(lambda: ag.sum_all(ag.tanh(ag.narrow(a, 1, 1, 3))), [a])
    check_op_gradients(
        lambda: ag.sum_all(ag.tanh(ag.reshape(a, (2, 6)))), [a]
    )
    check_op_gradients(lambda: ag.sum_all(ag.tanh(ag.transpose(a))), [a])
    b = rand(RNG, 2, 3, 4)
    check_op_gradients(
        lambda: ag.sum_all(ag.tanh(ag.transpose(b, (1, 0, 2)))), [b]
    )


def test_grad_softmax():
    a = rand(RNG, 6)
    w = rand(RNG, 6)
    check_op_gradients(lambda: ag.sum_all(ag.mul(ag.softmax(a), w)), [a, w])


def test_grad_softmax_rows():
    a = rand(RNG, 3, 5)
    w = rand(RNG, 3, 5)
    check_op_gradients(lambda: ag.sum_all(ag.mul(ag.softmax_rows(a), w)), [a, w])


def test_grad_lookup_fd():
    table = rand(RNG, 5, 3)
    check_op_gradients(
        lambda: ag.sum_all(ag.tanh(ag.lookup(table, 2))), [table]
    )


def test_grad_lookup_rows_fd():
    table = rand(RNG, 5, 3)
    check_op_gradients(
        lambda: ag.sum_all(ag.tanh(ag.lookup_rows(table, [1, 3, 1]))), [table]
    )


def test_grad_cross_entropy():
    logits = rand(RNG, 7)
    check_op_gradients(lambda: ag.cross_entropy(logits, 3), [logits])


def test_grad_cross_entropy_rows():
    logits = rand(RNG, 3, 5)
    w = np.array([1.0, 0.0, 1.0])
    check_op_gradients(
        lambda: ag.cross_entropy_rows(logits, [1, 4, 2], w), [logits]
    )


def test_grad_attention_pool():
    annot = rand(RNG, 2, 3, 4)
    query = rand(RNG, 2, 4)
    bias = ag.zeros((2, 3))
    w = rand(RNG, 2, 4)

    def loss():
        return ag.sum_all(ag.mul(ag.attention_pool(annot, query, bias), w))

    check_op_gradients(loss, [annot, query, bias])


def test_attention_pool_masking_zeroes_padding():
    rng = np.random.default_rng(3)
    annot = Tensor(rng.normal(size=(2, 3, 4)))
    query = Tensor(rng.normal(size=(2, 4)))
    bias = Tensor(np.array([[0.0, 0.0, -1e30], [0.0, -1e30, -1e30]]))
    ctx = ag.attention_pool(annot, query, bias)
    # row 1 attends only position 0, so its context is that row exactly
    np.testing.assert_allclose(ctx.data[1], annot.data[1, 0], rtol=1e-12)
    # changing a masked annotation row never changes the context
    annot2 = Tensor(annot.data.copy())
    annot2.data[0, 2, :] = 99.0
    ctx2 = ag.attention_pool(annot2, query, bias)
    np.testing.assert_allclose(ctx2.data[0], ctx.data[0], rtol=1e-12)


def test_grad_lstm_cell():
    z, h, c = rand(RNG, 2, 8), rand(RNG, 2, 2), rand(RNG, 2, 2)

    def loss():
        hn, cn = ag.lstm_cell(z, h, c)
        return ag.add(ag.sum_all(hn), ag.sum_all(ag.tanh(cn)))

    check_op_gradients(loss, [z, h, c])


def test_grad_lstm_cell_masked():
    z, h, c = rand(RNG, 3, 8), rand(RNG, 3, 2), rand(RNG, 3, 2)
    mask = np.array([1.0, 0.0, 1.0])

    def loss():
        hn, cn = ag.lstm_cell(z, h, c, mask)
        return ag.add(ag.sum_all(hn), ag.sum_all(ag.tanh(cn)))

    check_op_gradients(loss, [z, h, c])


def test_grad_sum_scale_chain_closed_form():
    # loss = tanh(w.x): d/dw = (1 - tanh^2(w.x)) x
    w, x = rand(RNG, 4), rand(RNG, 4)
    g = Graph()
    with g:
        dot = ag.sum_all(ag.mul(w, x))
        loss = ag.tanh(dot)
    g.backward(loss)
    expected = (1.0 - math.tanh(float(np.dot(w.data, x.data))) ** 2) * x.data
    np.testing.assert_allclose(w.grad, expected, rtol=1e-12)


# ---------------------------------------------------------------------------
# graph semantics


def test_backward_linear_all_ones():
    p = rand(RNG, 2, 3)
    g = Graph()
    with g:
        loss = ag.sum_all(p)
    g.backward(loss)
    np.testing.assert_array_equal(p.grad, np.ones((2, 3)))


def test_backward_requires_scalar():
    p = rand(RNG, 3)
    g = Graph()
    with g:
        out = ag.tanh(p)
    with pytest.raises(ag.GraphError):
        g.backward(out)


def test_unreachable_parameter_keeps_no_grad():
    p, q = rand(RNG, 2), rand(RNG, 2)
    g = Graph()
    with g:
        _ = ag.tanh(q)
        loss = ag.sum_all(ag.tanh(p))
    g.backward(loss)
    assert p.grad is not None
    assert q.grad is None


def test_backward_deterministic_bit_identical():
    rng = np.random.default_rng(7)
    vals = {
        "w": rng.uniform(-2, 2, (4, 4)),
        "x": rng.uniform(-2, 2, (4,)),
    }

    def run():
        w, x = Tensor(vals["w"]), Tensor(vals["x"])
        g = Graph()
        with g:
            h = ag.tanh(ag.matmul(w, x))
            h2 = ag.add(h, ag.mul(h, x))
            loss = ag.sum_all(h2)
        g.backward(loss)
        return w.grad.copy(), x.grad.copy()

    g1, g2 = run(), run()
    assert np.array_equal(g1[0], g2[0]) and np.array_equal(g1[1], g2[1])


def test_concat_narrow_roundtrip_values_and_grads():
    a, b = rand(RNG, 3), rand(RNG, 2)
    g = Graph()
    with g:
        joined = ag.concat([a, b], axis=0)
        back_a = ag.narrow(joined, 0, 0, 3)
        back_b = ag.narrow(joined, 0, 3, 5)
        loss = ag.add(
            ag.sum_all(ag.mul(back_a, back_a)), ag.sum_all(ag.mul(back_b, back_b))
        )
    np.testing.assert_array_equal(back_a.data, a.data)
    np.testing.assert_array_equal(back_b.data, b.data)
    g.backward(loss)
    np.testing.assert_allclose(a.grad, 2 * a.data, rtol=1e-12)
    np.testing.assert_allclose(b.grad, 2 * b.data, rtol=1e-12)


def test_grad_accumulates_across_uses():
    p = rand(RNG, 3)
    g = Graph()
    with g:
        loss = ag.add(ag.sum_all(p), ag.sum_all(p))
    g.backward(loss)
    np.testing.assert_array_equal(p.grad, np.full(3, 2.0))


# ---------------------------------------------------------------------------
# serialization


def test_tensor_save_load_roundtrip(tmp_path):
    t = rand(RNG, 3, 4, 2)
    path = tmp_path / "t.bin"
    ag.save_tensor(t, path)
    back = ag.load_tensor(path)
    assert back.shape == t.shape
    np.testing.assert_array_equal(back.data, t.data)


def test_tensor_binary_layout(tmp_path):
    t = ag.tensor([[1.0, 2.0], [3.0, 4.0]])
    path = tmp_path / "t.bin"
    ag.save_tensor(t, path)
    raw = path.read_bytes()
    import struct

    assert struct.unpack_from("<Q", raw, 0)[0] == 2
    assert struct.unpack_from("<QQ", raw, 8) == (2, 2)
    vals = np.frombuffer(raw, dtype="<f8", offset=24)
    np.testing.assert_array_equal(vals, [1.0, 2.0, 3.0, 4.0])
