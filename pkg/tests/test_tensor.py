"""Autodiff engine: forward oracles against plain numpy, reverse-mode
gradients against central differences, and the shape/index error contract."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pivotcap.tensor import (
    ShapeError,
    Tensor,
    add,
    concat,
    cosine_matrix,
    cross_entropy,
    embedding_lookup,
    exp,
    gather_rows,
    global_norm,
    layer_norm,
    log,
    matmul,
    mul,
    narrow,
    no_grad,
    numeric_grad_check,
    relu,
    reshape,
    scale,
    segment_sum,
    softmax,
    tensor_mean,
    tensor_sum,
    transpose,
)

GRAD_TOL = 1e-6


def _rng(seed=0):
    return np.random.default_rng(seed)


def _scalarize(out: Tensor, seed: int = 7) -> Tensor:
    w = Tensor(_rng(seed).normal(size=out.shape))
    return tensor_sum(mul(out, w))


def check_grad(f, x_data, seed=7):
    x = Tensor(np.asarray(x_data, dtype=np.float64), requires_grad=True)
    err = numeric_grad_check(lambda t: _scalarize(f(t), seed), x)
    assert err < GRAD_TOL, err


# -- forward oracles ---------------------------------------------------------


def test_elementwise_forward_matches_numpy():
    r = _rng(1)
    a = r.normal(size=(3, 4))
    b = r.normal(size=(3, 4))
    assert np.array_equal(add(Tensor(a), Tensor(b)).data, a + b)
    assert np.array_equal(mul(Tensor(a), Tensor(b)).data, a * b)
    assert np.array_equal(scale(Tensor(a), 2.5).data, a * 2.5)
    assert np.array_equal(relu(Tensor(a)).data, np.maximum(a, 0.0))
    assert np.allclose(exp(Tensor(a)).data, np.exp(a), atol=1e-15)
    assert np.allclose(log(Tensor(np.abs(a) + 0.5)).data, np.log(np.abs(a) + 0.5), atol=1e-15)


def test_matmul_transpose_reshape_forward():
    r = _rng(2)
    a = r.normal(size=(3, 4))
    b = r.normal(size=(4, 5))
    assert np.allclose(matmul(Tensor(a), Tensor(b)).data, a @ b, atol=1e-14)
    assert np.array_equal(transpose(Tensor(a)).data, a.T)
    assert np.array_equal(reshape(Tensor(a), (4, 3)).data, a.reshape(4, 3))
    assert np.array_equal(reshape(Tensor(a), (12,)).data, a.reshape(12))


def test_concat_and_narrow_forward():
    r = _rng(3)
    a = r.normal(size=(2, 4))
    b = r.normal(size=(3, 4))
    cat = concat([Tensor(a), Tensor(b)], axis=0)
    assert np.array_equal(cat.data, np.concatenate([a, b], axis=0))
    sl = narrow(Tensor(b), 0, 1, 2)
    assert np.array_equal(sl.data, b[1:3])
    sl = narrow(Tensor(b), 1, 2, 2)
    assert np.array_equal(sl.data, b[:, 2:4])


def test_reductions_forward():
    r = _rng(4)
    a = r.normal(size=(3, 5))
    assert tensor_sum(Tensor(a)).item() == pytest.approx(a.sum(), abs=1e-12)
    assert np.allclose(tensor_sum(Tensor(a), axis=0).data, a.sum(axis=0), atol=1e-13)
    assert np.allclose(tensor_sum(Tensor(a), axis=1).data, a.sum(axis=1), atol=1e-13)
    assert tensor_mean(Tensor(a)).item() == pytest.approx(a.mean(), abs=1e-12)
    assert np.allclose(tensor_mean(Tensor(a), axis=0).data, a.mean(axis=0), atol=1e-13)


def test_gather_and_segment_forward():
    r = _rng(5)
    a = r.normal(size=(4, 3))
    ids = np.array([2, 0, 2])
    assert np.array_equal(gather_rows(Tensor(a), ids).data, a[ids])
    assert np.array_equal(embedding_lookup(Tensor(a), ids).data, a[ids])
    seg = segment_sum(Tensor(a), np.array([1, 1, 0, 3]), 4)
    want = np.zeros((4, 3))
    want[1] = a[0] + a[1]
    want[0] = a[2]
    want[3] = a[3]
    assert np.allclose(seg.data, want, atol=1e-14)
    # segment 2 received nothing and stays zero
    assert np.array_equal(seg.data[2], np.zeros(3))


def test_softmax_rows_sum_to_one_and_match_numpy():
    r = _rng(6)
    a = r.normal(size=(4, 7)) * 3
    y = softmax(Tensor(a), axis=-1).data
    e = np.exp(a - a.max(axis=1, keepdims=True))
    assert np.allclose(y, e / e.sum(axis=1, keepdims=True), atol=1e-12)
    assert np.allclose(y.sum(axis=1), 1.0, atol=1e-12)
    y0 = softmax(Tensor(a), axis=0).data
    assert np.allclose(y0.sum(axis=0), 1.0, atol=1e-12)


def test_softmax_handles_masked_entries():
    a = np.array([[0.3, -np.inf, 1.2]])
    y = softmax(Tensor(a)).data
    assert y[0, 1] == 0.0
    assert y.sum() == pytest.approx(1.0, abs=1e-12)


def test_layer_norm_statistics():
    r = _rng(7)
    a = r.normal(size=(5, 16)) * 4 + 2
    y = layer_norm(Tensor(a)).data
    assert np.allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    assert np.allclose((y * y).mean(axis=-1), 1.0, atol=1e-4)


def test_cosine_matrix_matches_normalized_product():
    r = _rng(8)
    a = r.normal(size=(3, 6))
    b = r.normal(size=(4, 6))
    s = cosine_matrix(Tensor(a), Tensor(b)).data
    an = a / np.linalg.norm(a, axis=1, keepdims=True)
    bn = b / np.linalg.norm(b, axis=1, keepdims=True)
    assert np.allclose(s, an @ bn.T, atol=1e-12)
    assert np.all(np.abs(s) <= 1.0 + 1e-12)


def test_cross_entropy_matches_hand_oracle():
    logits = np.array([[2.0, 0.5, -1.0], [0.1, 0.2, 0.3]])
    ids = np.array([0, 2])
    out = cross_entropy(Tensor(logits), ids)
    want = 0.0
    for row, t in zip(logits, ids):
        z = np.log(np.exp(row - row.max()).sum()) + row.max()
        want += z - row[t]
    want /= 2
    assert out.item() == pytest.approx(want, abs=1e-12)


def test_cross_entropy_ignore_index():
    logits = np.array([[2.0, 0.5], [0.1, 0.2], [1.0, -1.0]])
    ids = np.array([0, 0, 1])
    full = cross_entropy(Tensor(logits), ids)
    with pytest.raises(ShapeError):
        cross_entropy(Tensor(logits), np.array([0, 0, 0]), ignore_index=0)
    out = cross_entropy(Tensor(logits), ids, ignore_index=1)
    row0, row1 = logits[0], logits[1]
    want = 0.0
    for row, t in ((row0, 0), (row1, 0)):
        z = np.log(np.exp(row - row.max()).sum()) + row.max()
        want += z - row[t]
    want /= 2
    assert out.item() == pytest.approx(want, abs=1e-12)
    assert full.item() != pytest.approx(out.item(), abs=1e-6)


# -- gradients ---------------------------------------------------------------


def test_gradients_of_primitive_ops():
    # every non-differentiated operand is drawn once; f must be deterministic
    # because central differences re-evaluate it at perturbed inputs
    r = _rng(10)
    a34 = r.normal(size=(3, 4))
    b34 = Tensor(r.normal(size=(3, 4)))
    b42 = Tensor(r.normal(size=(4, 2)))
    b54 = Tensor(r.normal(size=(5, 4)))
    check_grad(lambda t: add(t, b34), a34)
    check_grad(lambda t: mul(t, b34), a34)
    check_grad(lambda t: scale(t, -1.7), a34)
    check_grad(lambda t: matmul(t, b42), a34)
    check_grad(transpose, a34)
    check_grad(lambda t: reshape(t, (4, 3)), a34)
    check_grad(lambda t: narrow(t, 1, 1, 2), a34)
    check_grad(lambda t: concat([t, b34], axis=0), a34)
    check_grad(exp, a34 * 0.3)
    check_grad(log, np.abs(a34) + 0.5)
    check_grad(lambda t: softmax(t, axis=-1), a34)
    check_grad(layer_norm, a34)
    check_grad(lambda t: gather_rows(t, np.array([2, 0, 2, 1])), a34)
    check_grad(lambda t: segment_sum(t, np.array([1, 0, 1]), 2), a34)
    check_grad(lambda t: tensor_sum(t, axis=0), a34)
    check_grad(lambda t: tensor_mean(t, axis=1), a34)
    check_grad(lambda t: cosine_matrix(t, b54), a34 + 2.0)


def test_relu_gradient_away_from_kink():
    r = _rng(11)
    a = r.normal(size=(3, 4))
    a[np.abs(a) < 0.2] = 0.5
    check_grad(relu, a)


def test_cross_entropy_gradient():
    r = _rng(12)
    logits = r.normal(size=(4, 5))
    ids = np.array([0, 3, 2, 1])
    x = Tensor(logits, requires_grad=True)
    err = numeric_grad_check(lambda t: cross_entropy(t, ids), x)
    assert err < GRAD_TOL
    x = Tensor(logits, requires_grad=True)
    err = numeric_grad_check(lambda t: cross_entropy(t, np.array([0, 3, 0, 1]), ignore_index=0), x)
    assert err < GRAD_TOL


def test_broadcast_add_reduces_gradient_to_suffix():
    a = Tensor(np.zeros((3, 4)), requires_grad=True)
    bias = Tensor(np.zeros(4), requires_grad=True)
    out = add(a, bias)
    tensor_sum(out).backward()
    assert np.array_equal(bias.grad, np.full(4, 3.0))
    assert np.array_equal(a.grad, np.ones((3, 4)))


def test_gradient_accumulates_across_uses():
    x = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    out = add(x, x)
    tensor_sum(out).backward()
    assert np.array_equal(x.grad, np.full((1, 2), 2.0))


# -- shape and index errors --------------------------------------------------


def test_binary_shape_contract():
    a = Tensor(np.zeros((3, 4)))
    assert add(a, Tensor(np.zeros(4))).shape == (3, 4)
    assert add(Tensor(np.zeros(4)), a).shape == (3, 4)
    with pytest.raises(ShapeError):
        add(a, Tensor(np.zeros(3)))
    with pytest.raises(ShapeError):
        mul(a, Tensor(np.zeros((4, 3))))


def test_matmul_shape_errors():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 4))))
    with pytest.raises(ShapeError):
        matmul(Tensor(np.zeros(4)), Tensor(np.zeros((4, 2))))


def test_reshape_narrow_concat_errors():
    a = Tensor(np.zeros((3, 4)))
    with pytest.raises(ShapeError):
        reshape(a, (5, 2))
    with pytest.raises(ShapeError):
        narrow(a, 0, 2, 5)
    with pytest.raises(ShapeError):
        concat([], axis=0)
    with pytest.raises(ShapeError):
        concat([a, Tensor(np.zeros((3, 5)))], axis=0)


def test_index_errors():
    a = Tensor(np.zeros((3, 4)))
    with pytest.raises(IndexError):
        gather_rows(a, np.array([0, 3]))
    with pytest.raises(IndexError):
        gather_rows(a, np.array([-1]))
    with pytest.raises(ShapeError):
        gather_rows(a, np.array([[0, 1]]))
    with pytest.raises(ShapeError):
        gather_rows(a, np.array([0.5]))
    with pytest.raises(ShapeError):
        segment_sum(a, np.array([0, 1]), 2)
    with pytest.raises(IndexError):
        segment_sum(a, np.array([0, 1, 2]), 2)


def test_cosine_matrix_rejects_zero_norm_rows():
    a = np.ones((2, 3))
    bad = np.vstack([np.ones(3), np.zeros(3)])
    with pytest.raises(ValueError, match="zero norm"):
        cosine_matrix(Tensor(bad), Tensor(a))
    with pytest.raises(ValueError, match="right"):
        cosine_matrix(Tensor(a), Tensor(bad))
    with pytest.raises(ShapeError):
        cosine_matrix(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))))


def test_cross_entropy_errors():
    logits = Tensor(np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        cross_entropy(Tensor(np.zeros(3)), np.array([0]))
    with pytest.raises(ShapeError):
        cross_entropy(logits, np.array([0]))
    with pytest.raises(IndexError):
        cross_entropy(logits, np.array([0, 3]))


def test_backward_requires_scalar():
    x = Tensor(np.zeros((2, 2)), requires_grad=True)
    out = add(x, x)
    with pytest.raises(ShapeError):
        out.backward()


def test_numeric_grad_check_contract():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        numeric_grad_check(tensor_sum, x, eps=0.0)
    with pytest.raises(ValueError):
        numeric_grad_check(tensor_sum, Tensor(np.ones(2)))
    with pytest.raises(ShapeError):
        numeric_grad_check(lambda t: add(t, t), x)


# -- graph mechanics ---------------------------------------------------------


def test_no_grad_blocks_graph_construction():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with no_grad():
        out = add(x, x)
    assert not out.requires_grad
    out2 = add(x, x)
    assert out2.requires_grad


def test_detach_breaks_the_graph():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    y = add(x, x).detach()
    assert not y.requires_grad
    out = tensor_sum(mul(y, y))
    assert not out.requires_grad


def test_operator_sugar_and_item():
    x = Tensor(np.array([[2.0]]), requires_grad=True)
    out = (x + 1.0) * 3.0 - x
    assert out.item() == pytest.approx(7.0, abs=1e-12)
    neg = -x
    assert neg.item() == -2.0
    assert Tensor(np.float64(4.0)).item() == 4.0


def test_global_norm_oracle():
    arrays_ = [np.array([3.0]), np.array([[4.0]])]
    assert global_norm(arrays_) == pytest.approx(5.0, abs=1e-12)
    assert global_norm([]) == 0.0


@given(
    arrays(np.float64, (3, 5), elements=st.floats(-10, 10)),
)
def test_softmax_rows_always_normalized(a):
    y = softmax(Tensor(a)).data
    assert np.allclose(y.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(y >= 0.0)


@given(
    arrays(np.float64, (2, 3), elements=st.floats(-5, 5)),
    arrays(np.float64, (2, 3), elements=st.floats(-5, 5)),
)
def test_add_commutes(a, b):
    assert np.array_equal(add(Tensor(a), Tensor(b)).data, add(Tensor(b), Tensor(a)).data)
