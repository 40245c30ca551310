"""Minimal dense-tensor library with reverse-mode automatic differentiation.

Tensors wrap float64 numpy arrays. Operations executed while a Graph is
active are recorded on a tape; Graph.backward replays the tape in exact
reverse insertion order, accumulating gradients into every tensor that the
loss depends on. Without an active graph, ops evaluate forward only, which
is what greedy decoding uses.

Shape discipline is strict: binary elementwise ops require identical
shapes, and the only broadcasting allowed is scalar-times-tensor (`scale`)
plus the explicit row-broadcast of `add_bias`.
"""

from __future__ import annotations

import itertools
import math
import struct
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class GraphError(RuntimeError):
    """A graph contract was violated (e.g. backward from a non-scalar)."""


_node_ids = itertools.count()


class Tensor:
    """A dense float64 array plus an accumulated gradient.

    `data` is the forward value (any rank, C-contiguous row-major).
    `grad` is None until backward first accumulates into this tensor.
    """

    __slots__ = ("data", "grad", "node_id")

    def __init__(self, data) -> None:
        # asarray keeps 0-d scalars 0-d; ascontiguousarray would promote them
        arr = np.asarray(data, dtype=np.float64, order="C")
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.node_id = next(_node_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the forward values."""
        return self.data.reshape(-1)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node_id={self.node_id})"


def tensor(values, shape: Sequence[int] | None = None) -> Tensor:
    """Build a tensor from nested lists/arrays, optionally reshaped."""
    t = Tensor(np.asarray(values, dtype=np.float64))
    if shape is not None:
        t.data = np.ascontiguousarray(t.data.reshape(tuple(shape)))
    return t


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor(np.zeros(tuple(shape), dtype=np.float64))


class _Record:
    __slots__ = ("outputs", "backward")

    def __init__(self, outputs: tuple[Tensor, ...], backward: Callable) -> None:
        self.outputs = outputs
        self.backward = backward


_active_graph: "Graph | None" = None


class Graph:
    """Tape of recorded operations, in execution (= topological) order.

    Use as a context manager around forward computation, then call
    `backward(loss)`. A graph is single-use per forward pass and confined
    to one thread.
    """

    def __init__(self) -> None:
        self._records: list[_Record] = []

    def __enter__(self) -> "Graph":
        global _active_graph
        if _active_graph is not None:
            raise GraphError("a graph is already active")
        _active_graph = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _active_graph
        _active_graph = None

    def _record(self, outputs: tuple[Tensor, ...], backward: Callable) -> None:
        self._records.append(_Record(outputs, backward))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Populate grads of everything `loss` depends on; seed is 1.0.

        Records are replayed in exact reverse insertion order, so two runs
        over the same graph accumulate bit-identical gradients.
        """
        if loss.data.shape != ():
            raise GraphError(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        _accumulate(loss, np.ones((), dtype=np.float64))
        for rec in reversed(self._records):
            grads = tuple(t.grad for t in rec.outputs)
            if all(g is None for g in grads):
                continue
            rec.backward(*grads)


def _graph() -> Graph | None:
    return _active_graph


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    # First contribution copies: g may alias another tensor's grad buffer.
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _accumulate_owned(t: Tensor, g: np.ndarray) -> None:
    # For freshly allocated gradient arrays only: ownership transfers.
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


def _check_finite(arr: np.ndarray, op: str) -> None:
    # Cheap first pass: a non-finite element makes the sum non-finite.
    # A finite-overflowing sum of finite elements passes the exact check.
    with np.errstate(over="ignore", invalid="ignore"):
        total = float(arr.sum())
    if not math.isfinite(total):
        if not np.isfinite(arr).all():
            raise FloatingPointError(f"{op} produced non-finite values")


def _make(data: np.ndarray, op: str) -> Tensor:
    _check_finite(data, op)
    return Tensor(data)


# ---------------------------------------------------------------------------
# ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Supports [m,k]x[k,n], [k]x[k,n], [m,k]x[k], and the
    batched form [B,m,k]x[B,k,n]."""
    ad, bd = a.data, b.data
    ra, rb = ad.ndim, bd.ndim
    ok = (
        (ra == 2 and rb == 2 and ad.shape[1] == bd.shape[0])
        or (ra == 1 and rb == 2 and ad.shape[0] == bd.shape[0])
        or (ra == 2 and rb == 1 and ad.shape[1] == bd.shape[0])
        or (ra == 3 and rb == 3 and ad.shape[0] == bd.shape[0] and ad.shape[2] == bd.shape[1])
    )
    if not ok:
        raise ShapeError(f"matmul: incompatible shapes {ad.shape} x {bd.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        prod = ad @ bd
    out = _make(prod, "matmul")
    g = _graph()
    if g is not None:
        def bwd(dout):
            # dA = dC.B^T, dB = A^T.dC, specialised per rank combination
            if ra == 2 and rb == 2:
                _accumulate_owned(a, dout @ bd.T)
                _accumulate_owned(b, ad.T @ dout)
            elif ra == 1 and rb == 2:
                _accumulate_owned(a, bd @ dout)
                _accumulate_owned(b, np.outer(ad, dout))
            elif ra == 2 and rb == 1:
                _accumulate_owned(a, np.outer(dout, bd))
                _accumulate_owned(b, ad.T @ dout)
            else:
                _accumulate_owned(a, dout @ bd.transpose(0, 2, 1))
                _accumulate_owned(b, ad.transpose(0, 2, 1) @ dout)
        g._record((out,), bwd)
    return out


def _binary_check(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    _binary_check(a, b, "add")
    out = _make(a.data + b.data, "add")
    g = _graph()
    if g is not None:
        def bwd(dout):
            _accumulate(a, dout)
            _accumulate(b, dout)
        g._record((out,), bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two same-shape tensors."""
    _binary_check(a, b, "mul")
    with np.errstate(over="ignore"):
        prod = a.data * b.data
    out = _make(prod, "mul")
    g = _graph()
    if g is not None:
        def bwd(dout):
            _accumulate_owned(a, dout * b.data)
            _accumulate_owned(b, dout * a.data)
        g._record((out,), bwd)
    return out


def scale(a: Tensor, s: float) -> Tensor:
    """Scalar times tensor (the one permitted broadcast)."""
    s = float(s)
    out = _make(a.data * s, "scale")
    g = _graph()
    if g is not None:
        def bwd(dout):
            _accumulate_owned(a, dout * s)
        g._record((out,), bwd)
    return out


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    """Add a length-n bias vector to every row of an [m,n] matrix."""
    if a.data.ndim != 2 or b.data.ndim != 1 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"add_bias: shapes {a.data.shape} and {b.data.shape}")
    out = _make(a.data + b.data, "add_bias")
    g = _graph()
    if g is not None:
        def bwd(dout):
            _accumulate(a, dout)
            _accumulate_owned(b, dout.sum(axis=0))
        g._record((out,), bwd)
    return out


def tanh(a: Tensor) -> Tensor:
    """Elementwise tanh; d tanh = 1 - tanh^2."""
    out = _make(np.tanh(a.data), "tanh")
    g = _graph()
    if g is not None:
        def bwd(dout):
            _accumulate_owned(a, dout * (1.0 - out.data * out.data))
        g._record((out,), bwd)
    return out


def sigmoid(a: Tensor) -> Tensor:
    """Elementwise logistic function; d sigma = sigma(1 - sigma)."""
    with np.errstate(over="ignore"):
        out_data = 1.0 / (1.0 + np.exp(-a.data))
    out = _make(out_data, "sigmoid")
    g = _graph()
    if g is not None:
        def bwd(dout):
            _accumulate_owned(a, dout * out.data * (1.0 - out.data))
        g._record((out,), bwd)
    return out


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along `axis`; backward splits the gradient."""
    if not parts:
        raise ShapeError("concat: empty input")
    datas = [p.data for p in parts]
    nd = datas[0].ndim
    for d in datas[1:]:
        if d.ndim != nd or any(
            d.shape[i] != datas[0].shape[i] for i in range(nd) if i != axis
        ):
            raise ShapeError(
                f"concat: incompatible shapes {[p.shape for p in parts]} on axis {axis}"
            )
    out = _make(np.concatenate(datas, axis=axis), "concat")
    g = _graph()
    if g is not None:
        sizes = [d.shape[axis] for d in datas]
        def bwd(dout):
            off = 0
            for p, s in zip(parts, sizes):
                sl = [slice(None)] * nd
                sl[axis] = slice(off, off + s)
                _accumulate(p, dout[tuple(sl)])
                off += s
        g._record((out,), bwd)
    return out


def narrow(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Slice [start, stop) along `axis`; backward zero-pads."""
    if not (0 <= start <= stop <= a.data.shape[axis]):
        raise ShapeError(
            f"narrow: range [{start},{stop}) outside axis {axis} of {a.shape}"
        )
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, stop)
    out = Tensor(a.data[tuple(sl)])
    g = _graph()
    if g is not None:
        def bwd(dout):
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[tuple(sl)] += dout
        g._record((out,), bwd)
    return out


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: {a.shape} to {shape}")
    out = Tensor(a.data.reshape(shape))
    g = _graph()
    if g is not None:
        def bwd(dout):
            _accumulate(a, dout.reshape(a.data.shape))
        g._record((out,), bwd)
    return out


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes (default: reverse); backward applies the inverse."""
    out = Tensor(np.ascontiguousarray(np.transpose(a.data, axes)))
    g = _graph()
    if g is not None:
        if axes is None:
            inv = None
        else:
            inv = np.argsort(np.asarray(axes))
        def bwd(dout):
            _accumulate(a, np.transpose(dout, inv))
        g._record((out,), bwd)
    return out


def softmax(x: Tensor) -> Tensor:
    """Stable softmax of a vector: positive outputs summing to 1."""
    if x.data.ndim != 1 or x.data.shape[0] < 1:
        raise ShapeError(f"softmax expects a non-empty vector, got {x.shape}")
    z = x.data - x.data.max()
    e = np.exp(z)
    out = _make(e / e.sum(), "softmax")
    g = _graph()
    if g is not None:
        def bwd(dout):
            s = out.data
            _accumulate_owned(x, s * (dout - float(np.dot(dout, s))))
        g._record((out,), bwd)
    return out


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise stable softmax of an [m,n] matrix."""
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = _make(e / e.sum(axis=1, keepdims=True), "softmax_rows")
    g = _graph()
    if g is not None:
        def bwd(dout):
            s = out.data
            _accumulate_owned(x, s * (dout - (dout * s).sum(axis=1, keepdims=True)))
        g._record((out,), bwd)
    return out


def lookup(table: Tensor, index: int) -> Tensor:
    """Row `index` of an embedding table; backward is a sparse row update."""
    v = table.data.shape[0]
    if not (0 <= index < v):
        raise IndexError(f"lookup index {index} out of range [0,{v})")
    out = Tensor(table.data[index].copy())
    g = _graph()
    if g is not None:
        def bwd(dout):
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            table.grad[index] += dout
        g._record((out,), bwd)
    return out


def lookup_rows(table: Tensor, indices) -> Tensor:
    """Gather rows for a batch of indices; duplicate rows accumulate."""
    idx = np.asarray(indices, dtype=np.int64)
    v = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= v):
        raise IndexError(f"lookup_rows index out of range [0,{v})")
    out = Tensor(table.data[idx])
    g = _graph()
    if g is not None:
        def bwd(dout):
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, idx, dout)
        g._record((out,), bwd)
    return out


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target] as a scalar tensor."""
    v = logits.data.shape[0]
    if logits.data.ndim != 1:
        raise ShapeError(f"cross_entropy expects a vector, got {logits.shape}")
    if not (0 <= target < v):
        raise IndexError(f"cross_entropy target {target} out of range [0,{v})")
    m = logits.data.max()
    e = np.exp(logits.data - m)
    zsum = e.sum()
    loss = float(m + np.log(zsum) - logits.data[target])
    out = _make(np.asarray(loss), "cross_entropy")
    g = _graph()
    if g is not None:
        sm = e / zsum
        def bwd(dout):
            d = sm * dout
            d[target] -= dout
            _accumulate_owned(logits, d)
        g._record((out,), bwd)
    return out


def cross_entropy_rows(logits: Tensor, targets, weights=None) -> Tensor:
    """Weighted sum of per-row cross-entropies for a [B,V] logit matrix.

    `weights` is a constant float vector (loss masking); None means all 1.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy_rows expects a matrix, got {logits.shape}")
    b, v = logits.data.shape
    idx = np.asarray(targets, dtype=np.int64)
    if idx.shape != (b,):
        raise ShapeError(f"cross_entropy_rows: {b} rows but targets shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= v):
        raise IndexError(f"cross_entropy_rows target out of range [0,{v})")
    w = np.ones(b) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (b,):
        raise ShapeError(f"cross_entropy_rows: weights shape {w.shape} != ({b},)")
    m = logits.data.max(axis=1, keepdims=True)
    e = np.exp(logits.data - m)
    zsum = e.sum(axis=1)
    rows = np.arange(b)
    per_row = m[:, 0] + np.log(zsum) - logits.data[rows, idx]
    out = _make(np.asarray(float(np.dot(w, per_row))), "cross_entropy_rows")
    g = _graph()
    if g is not None:
        sm = e / zsum[:, None]
        def bwd(dout):
            d = sm * (w * dout)[:, None]
            d[rows, idx] -= w * dout
            _accumulate_owned(logits, d)
        g._record((out,), bwd)
    return out


def lstm_cell(
    z: Tensor, h_prev: Tensor, c_prev: Tensor, mask: np.ndarray | None = None
) -> tuple[Tensor, Tensor]:
    """Fused LSTM pointwise block.

    `z` holds the four gate pre-activations [..., 4H] in (input, forget,
    cell, output) order; returns (h, c). `mask` is an optional constant
    [B] vector of 0/1 step flags: masked rows carry the previous state
    through unchanged, which is how right-padded batches keep per-sentence
    final states exact.
    """
    hdim = h_prev.data.shape[-1]
    if z.data.shape[-1] != 4 * hdim or h_prev.data.shape != c_prev.data.shape:
        raise ShapeError(
            f"lstm_cell: z {z.shape}, h {h_prev.shape}, c {c_prev.shape}"
        )
    zi = z.data[..., :hdim]
    zf = z.data[..., hdim:2 * hdim]
    zg = z.data[..., 2 * hdim:3 * hdim]
    zo = z.data[..., 3 * hdim:]
    with np.errstate(over="ignore"):
        i = 1.0 / (1.0 + np.exp(-zi))
        f = 1.0 / (1.0 + np.exp(-zf))
        o = 1.0 / (1.0 + np.exp(-zo))
    gg = np.tanh(zg)
    c_raw = f * c_prev.data + i * gg
    tc = np.tanh(c_raw)
    h_raw = o * tc
    if mask is None:
        h_data, c_data = h_raw, c_raw
    else:
        m = np.asarray(mask, dtype=np.float64)[:, None]
        h_data = m * h_raw + (1.0 - m) * h_prev.data
        c_data = m * c_raw + (1.0 - m) * c_prev.data
    h_out = _make(h_data, "lstm_cell")
    c_out = _make(c_data, "lstm_cell")
    g = _graph()
    if g is not None:
        def bwd(dh, dc):
            if dh is None:
                dh = np.zeros_like(h_out.data)
            if dc is None:
                dc = np.zeros_like(c_out.data)
            if mask is None:
                dh_raw, dc_ext = dh, dc
            else:
                m = np.asarray(mask, dtype=np.float64)[:, None]
                dh_raw = dh * m
                dc_ext = dc * m
                _accumulate_owned(h_prev, dh * (1.0 - m))
                _accumulate_owned(c_prev, dc * (1.0 - m))
            do = dh_raw * tc
            dc_raw = dc_ext + dh_raw * o * (1.0 - tc * tc)
            di = dc_raw * gg
            df = dc_raw * c_prev.data
            dg = dc_raw * i
            dz = np.empty_like(z.data)
            dz[..., :hdim] = di * i * (1.0 - i)
            dz[..., hdim:2 * hdim] = df * f * (1.0 - f)
            dz[..., 2 * hdim:3 * hdim] = dg * (1.0 - gg * gg)
            dz[..., 3 * hdim:] = do * o * (1.0 - o)
            _accumulate_owned(z, dz)
            _accumulate_owned(c_prev, dc_raw * f)
        g._record((h_out, c_out), bwd)
    return h_out, c_out


def attention_pool(annotations: Tensor, query: Tensor, bias: Tensor) -> Tensor:
    """Fused global-attention block for a batch.

    annotations [B,T,e], query [B,e], bias [B,T] (0 on real positions, a
    huge negative on padding). Scores are per-position dot products of the
    query with the annotation rows; the softmax-weighted annotation sum is
    returned as the context [B,e]. Equivalent to score/softmax/combine as
    separate ops, fused to keep the batched decoder loop off the
    per-batch-item GEMM path.
    """
    an, q, bi = annotations.data, query.data, bias.data
    if (
        an.ndim != 3 or q.ndim != 2 or bi.ndim != 2
        or an.shape[0] != q.shape[0] or an.shape[2] != q.shape[1]
        or bi.shape != an.shape[:2]
    ):
        raise ShapeError(
            f"attention_pool: annotations {an.shape}, query {q.shape}, "
            f"bias {bi.shape}"
        )
    scores = np.einsum("bte,be->bt", an, q, optimize=True) + bi
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    weights = e / e.sum(axis=1, keepdims=True)
    ctx = np.einsum("bt,bte->be", weights, an, optimize=True)
    out = _make(ctx, "attention_pool")
    g = _graph()
    if g is not None:
        def bwd(dout):
            dw = np.einsum("bte,be->bt", an, dout, optimize=True)
            dannot = weights[:, :, None] * dout[:, None, :]
            ds = weights * (dw - (dw * weights).sum(axis=1, keepdims=True))
            dannot += ds[:, :, None] * q[:, None, :]
            dq = np.einsum("bte,bt->be", an, ds, optimize=True)
            _accumulate_owned(annotations, dannot)
            _accumulate_owned(query, dq)
            _accumulate_owned(bias, ds)
        g._record((out,), bwd)
    return out


def sum_all(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = _make(np.asarray(a.data.sum()), "sum_all")
    g = _graph()
    if g is not None:
        def bwd(dout):
            _accumulate_owned(a, np.full_like(a.data, float(dout)))
        g._record((out,), bwd)
    return out


# ---------------------------------------------------------------------------
# binary serialization: rank, dims (u64 LE), then float64 LE values


def save_tensor(t: Tensor, path) -> None:
    arr = np.ascontiguousarray(t.data, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", arr.ndim))
        for d in arr.shape:
            fh.write(struct.pack("<Q", d))
        fh.write(arr.tobytes())


def load_tensor(path) -> Tensor:
    with open(path, "rb") as fh:
        raw = fh.read()
    (rank,) = struct.unpack_from("<Q", raw, 0)
    dims = struct.unpack_from(f"<{rank}Q", raw, 8)
    data = np.frombuffer(raw, dtype="<f8", offset=8 + 8 * rank).reshape(dims)
    return Tensor(data.copy())
