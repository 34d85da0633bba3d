import numpy as np
import pytest
from hypothesis import given, strategies as st

from pivotcap import autodiff as ad
from pivotcap.autodiff import Tape, Tensor, finite_diff_check
from pivotcap.rng import Rng

seeds = st.integers(0, 10_000)


def _w(shape, seed):
    return Tensor(Rng(seed, "w").normal(shape) + 0.3)


def check(fn, params, tol=1e-5):
    # 10x tighter than the acceptance bound; tiny entries carry ~1e-11 round-off
    assert finite_diff_check(fn, params) < tol


@given(seeds)
def test_linear_and_matmul(seed):
    r = Rng(seed)
    x, W, b = (ad.parameter(r.derive(k).normal(s)) for k, s in (("x", (3, 4)), ("W", (2, 4)), ("b", (2,))))
    check(lambda: ad.sum(ad.mul(ad.linear(x, W, b), _w((3, 2), seed))), [x, W, b])
    check(lambda: ad.sum(ad.mul(ad.matmul(x, ad.reshape(W, (4, 2))), _w((3, 2), seed))), [x, W])


@given(seeds)
def test_pointwise(seed):
    a = ad.parameter(Rng(seed).normal((2, 3)))
    b = ad.parameter(Rng(seed, "b").normal((2, 3)))
    for op in (lambda: ad.mul(ad.tanh(a), ad.sigmoid(b)), lambda: ad.sub(a, ad.scale(b, 3.0)),
               lambda: ad.sqrt(ad.add(ad.mul(a, a), Tensor(np.ones((2, 3)))))):
        check(lambda: ad.sum(ad.mul(op(), _w((2, 3), seed))), [a, b])


@given(seeds)
def test_shape_ops(seed):
    a = ad.parameter(Rng(seed).normal((2, 3)))
    b = ad.parameter(Rng(seed, "b").normal((2, 3)))

    def f():
        s = ad.stack([a, b], axis=1)                  # 2x2x3
        c = ad.concat([a, b], axis=0)                 # 4x3
        g = ad.getitem(c, (slice(1, 3), [0, 2]))      # 2x2
        return ad.add(ad.sum(ad.mul(s, _w((2, 2, 3), seed))), ad.sum(ad.mul(g, _w((2, 2), seed))))
    check(f, [a, b])
    check(lambda: ad.mean(ad.mul(ad.sum(a, axis=1), _w((2,), seed))), [a])


@given(seeds)
def test_log_softmax_and_cross_entropy(seed):
    r = Rng(seed)
    x = ad.parameter(r.normal((4, 5)))
    t = r.derive("t").integers(5, (4,))
    check(lambda: ad.sum(ad.mul(ad.log_softmax(x), _w((4, 5), seed))), [x])
    check(lambda: ad.cross_entropy(x, t, [1, 0, 1, 1]), [x])


def test_cross_entropy_value_and_mask():
    logits = Tensor(np.log(np.array([[0.5, 0.25, 0.25], [0.1, 0.1, 0.8]])))
    v = ad.cross_entropy(logits, [0, 2], [True, False]).item()
    assert v == pytest.approx(np.log(2), abs=1e-12)
    with pytest.raises(ValueError):
        ad.cross_entropy(logits, [0, 2], [False, False])
    with pytest.raises(IndexError):
        ad.cross_entropy(logits, [0, 3])


@given(seeds)
def test_embedding_lookup_accumulates_repeats(seed):
    E = ad.parameter(Rng(seed).normal((6, 3)))
    ids = np.array([[1, 1, 4], [0, 1, 5]])
    check(lambda: ad.sum(ad.mul(ad.embedding_lookup(E, ids), _w((2, 3, 3), seed))), [E])
    with Tape() as tape:
        loss = ad.sum(ad.embedding_lookup(E, ids))
    tape.backward(loss)
    assert np.allclose(E.grad[1], 3.0) and np.allclose(E.grad[2], 0.0)


@given(seeds)
def test_row_l2_sum(seed):
    r = Rng(seed)
    A = ad.parameter(r.normal((5, 3)))
    B = ad.parameter(r.derive("b").normal((4, 3)))
    check(lambda: ad.row_l2_sum(A, B, [0, 2, 4], [3, 1, 0], eps=1e-12), [A, B])


def test_row_l2_sum_zero_at_equal_rows():
    A = ad.parameter(np.ones((2, 3)))
    with Tape() as tape:
        loss = ad.row_l2_sum(A, Tensor(np.ones((2, 3))), [0, 1], [0, 1])
    tape.backward(loss)
    assert loss.item() == 0.0 and np.all(A.grad == 0.0)


@given(seeds, st.booleans())
def test_lstm_cell(seed, masked):
    r = Rng(seed)
    B, d, H = 3, 2, 4
    x, h, c = (ad.parameter(r.derive(k).normal(s)) for k, s in (("x", (B, d)), ("h", (B, H)), ("c", (B, H))))
    W, b = ad.parameter(r.derive("W").normal((4 * H, d + H), 0.5)), ad.parameter(r.derive("b").normal((4 * H,)))
    mask = [True, False, True] if masked else None

    def f():
        h1, c1 = ad.lstm_cell(x, h, c, W, b, mask)
        return ad.add(ad.sum(ad.mul(h1, _w((B, H), seed))), ad.sum(ad.mul(c1, _w((B, H), seed + 1))))
    check(f, [x, h, c, W, b])


def test_lstm_mask_carries_state():
    r = Rng(0)
    h, c = Tensor(r.normal((2, 3))), Tensor(r.normal((2, 3)))
    h1, c1 = ad.lstm_cell(Tensor(r.normal((2, 2))), h, c, Tensor(r.normal((12, 5))), Tensor(np.zeros(12)),
                          [True, False])
    assert np.array_equal(h1.data[1], h.data[1]) and np.array_equal(c1.data[1], c.data[1])
    assert not np.array_equal(h1.data[0], h.data[0])


@given(seeds)
def test_additive_attention(seed):
    r = Rng(seed)
    B, M, A, K = 2, 4, 3, 5
    q, keys = ad.parameter(r.normal((B, A))), ad.parameter(r.derive("k").normal((B, M, A)))
    v, ann = ad.parameter(r.derive("v").normal((A,))), ad.parameter(r.derive("a").normal((B, M, K)))
    mask = np.array([[1, 1, 1, 0], [1, 1, 1, 1]], dtype=bool)

    def f():
        ctx, w = ad.additive_attention(q, keys, v, ann, mask)
        return ad.add(ad.sum(ad.mul(ctx, _w((B, K), seed))), ad.sum(ad.mul(w, _w((B, M), seed))))
    check(f, [q, keys, v, ann])
    _, w = ad.additive_attention(q, keys, v, ann, mask)
    assert np.allclose(w.data.sum(axis=1), 1.0) and w.data[0, 3] == 0.0


def test_attention_rejects_fully_masked_row():
    z = Tensor(np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        ad.additive_attention(Tensor(np.zeros((1, 2))), z, Tensor(np.zeros(2)), z, np.zeros((1, 2), bool))


def test_detach_blocks_gradient():
    a = ad.parameter(np.array([1.0, 2.0]))
    with Tape() as tape:
        loss = ad.sum(ad.add(ad.mul(a, a), ad.mul(ad.detach(a), a)))
    tape.backward(loss)
    assert np.allclose(a.grad, 3 * a.data)


def test_tape_consumed_once():
    a = ad.parameter(np.ones(2))
    with Tape() as tape:
        loss = ad.sum(ad.mul(a, a))
    tape.backward(loss)
    with pytest.raises(RuntimeError):
        tape.backward(loss)


def test_eager_without_tape_records_nothing():
    a = ad.parameter(np.ones(2))
    out = ad.sum(a)
    assert out._tape is None and ad.no_grad_active()
    with pytest.raises(ValueError):
        ad.backward(out)


def test_backward_requires_scalar():
    a = ad.parameter(np.ones(2))
    with Tape() as tape:
        out = ad.mul(a, a)
        with pytest.raises(ValueError):
            tape.backward(out)


def test_shape_errors():
    with pytest.raises(ValueError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ValueError):
        ad.elementwise("mul", Tensor(np.ones(2)), Tensor(np.ones(3)))
    with pytest.raises(ValueError):
        ad.elementwise("pow", Tensor(np.ones(2)))


def test_dropout_inverted_scaling():
    x = Tensor(np.ones((200, 50)))
    y = ad.dropout(x, 0.3, True, Rng(0))
    kept = y.data != 0
    assert np.allclose(y.data[kept], 1 / 0.7)
    assert abs(kept.mean() - 0.7) < 0.02
    assert ad.dropout(x, 0.3, False) is x
    with pytest.raises(ValueError):
        ad.dropout(x, 1.0, True, Rng(0))


def test_finite_diff_detects_wrong_gradient():
    a = ad.parameter(np.array([0.7, -1.3]))

    def bad():
        out = ad.Tensor(np.array(float(np.sum(a.data ** 3))))
        ad._record((a,), (out,), lambda g: ad._acc(a, g * a.data ** 2))  # missing factor 3
        return out
    assert finite_diff_check(bad, [a]) > 0.1
