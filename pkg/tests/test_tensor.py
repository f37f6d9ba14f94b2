import numpy as np
import pytest

from dingdate import tensor as T


def test_linear_identity_passthrough():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = T.linear(x, np.eye(2), np.zeros(2))
    np.testing.assert_array_equal(out, x)


def test_linear_hand_product():
    out = T.linear(np.array([[1.0, 2.0]]), np.array([[1.0], [1.0]]), np.array([1.0]))
    np.testing.assert_array_equal(out, [[4.0]])


def test_linear_shape_mismatch():
    with pytest.raises(T.ShapeMismatchError):
        T.linear(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(2))
    with pytest.raises(T.ShapeMismatchError):
        T.linear(np.zeros((2, 3)), np.zeros((3, 2)), np.zeros(5))


def test_sigmoid_at_zero():
    assert T.sigmoid(np.array([0.0]))[0] == 0.5


def test_softmax_uniform_rows():
    out = T.softmax(np.zeros((3, 11)))
    np.testing.assert_allclose(out, np.full((3, 11), 1.0 / 11.0))
    np.testing.assert_allclose(out.sum(axis=1), np.ones(3), atol=1e-12)


def test_relu_negative_value_and_gradient():
    with T.Tape() as tape:
        x = T.Tensor(np.array([-3.0, 2.0]))
        loss = T.relu(x).sum()
        grads = tape.backward(loss)
    np.testing.assert_array_equal(T.relu(np.array([-3.0, 2.0])), [0.0, 2.0])
    np.testing.assert_array_equal(grads[x], [0.0, 1.0])


def test_add_and_gradients():
    with T.Tape() as tape:
        a = T.Tensor(np.array([1.0, 2.0]))
        b = T.Tensor(np.array([3.0, 4.0]))
        out = T.add(a, b)
        grads = tape.backward(out.sum())
    np.testing.assert_array_equal(out.values, [4.0, 6.0])
    np.testing.assert_array_equal(grads[a], [1.0, 1.0])
    np.testing.assert_array_equal(grads[b], [1.0, 1.0])


def test_add_rejects_shape_mismatch():
    with pytest.raises(T.ShapeMismatchError):
        T.add(np.zeros(2), np.zeros(3))


def test_add_zero_is_identity():
    a = np.array([1.5, -2.0])
    np.testing.assert_array_equal(T.add(a, np.zeros(2)), a)


def test_stop_grad_add_forward_bit_identical_to_add():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 5, 3))
    plain = T.add(a, b)
    truncated = T.stop_grad_add(a, b)
    assert np.array_equal(plain, truncated)


def test_stop_grad_add_blocks_gradient():
    with T.Tape() as tape:
        a = T.Tensor(np.array([1.0, 2.0]))
        b = T.Tensor(np.array([3.0, 4.0]))
        out = T.stop_grad_add(a, b)
        grads = tape.backward(out.sum())
    np.testing.assert_array_equal(grads[a], [1.0, 1.0])
    assert b not in grads


def test_stop_grad_add_isolates_upstream_parameters():
    # parameters feeding the detached operand only get no gradient at all
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4, 3))
    with T.Tape() as tape:
        w_main = T.Tensor(rng.normal(size=(3, 2)))
        w_detached = T.Tensor(rng.normal(size=(3, 2)))
        main = T.matmul(x, w_main)
        side = T.matmul(x, w_detached)
        loss = T.stop_grad_add(main, side).sum()
        grads = tape.backward(loss)
    assert w_main in grads
    assert w_detached not in grads


def test_backward_requires_scalar():
    with T.Tape() as tape:
        x = T.Tensor(np.ones(3))
        y = x * 2.0
        with pytest.raises(T.NotScalarError):
            tape.backward(y)


def test_backward_sum_gives_ones():
    with T.Tape() as tape:
        x = T.Tensor(np.arange(6.0).reshape(2, 3))
        grads = tape.backward(x.sum())
    np.testing.assert_array_equal(grads[x], np.ones((2, 3)))


def test_backward_is_repeatable():
    with T.Tape() as tape:
        x = T.Tensor(np.array([0.3, -0.7]))
        loss = (T.sigmoid(x) * x).sum()
        g1 = tape.backward(loss)
        g2 = tape.backward(loss)
    np.testing.assert_array_equal(g1[x], g2[x])


def test_pick_forward_and_scatter_gradient():
    with T.Tape() as tape:
        x = T.Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        out = T.pick(x, np.array([1, 0]))
        grads = tape.backward(out.sum())
    np.testing.assert_array_equal(out.values, [2.0, 3.0])
    np.testing.assert_array_equal(grads[x], [[0.0, 1.0], [1.0, 0.0]])


def test_clip_gradient_masked_outside_range():
    with T.Tape() as tape:
        x = T.Tensor(np.array([-1.0, 0.5, 2.0]))
        out = T.clip(x, 0.0, 1.0)
        grads = tape.backward(out.sum())
    np.testing.assert_array_equal(out.values, [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(grads[x], [0.0, 1.0, 0.0])


def test_masked_logsumexp_matches_dense_reference():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 6))
    mask = (rng.random((3, 6)) < 0.5).astype(float)
    mask[2] = 0.0  # empty row exercises the unit term
    out = T.masked_logsumexp(x, mask, include_unit=True)
    expected = np.log(1.0 + np.exp(x) @ mask.T)
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_masked_logsumexp_stable_for_large_inputs():
    x = np.array([[800.0, 700.0]])
    out = T.masked_logsumexp(x, np.ones((1, 2)), include_unit=True)
    assert np.isfinite(out).all()
    np.testing.assert_allclose(out[0, 0], 800.0, atol=1e-6)


@pytest.mark.parametrize("op,args", [
    (T.sigmoid, ()),
    (T.relu, ()),
    (T.softplus, ()),
    (T.exp, ()),
    (T.softmax, ()),
    (T.log_softmax, ()),
])
def test_elementwise_gradients_match_finite_differences(op, args):
    rng = np.random.default_rng(3)
    x0 = rng.normal(0.0, 1.5, (3, 4)) + 0.1  # keep relu off its kink
    weights = rng.normal(size=(3, 4))

    def scalar(arrays):
        return float((op(arrays[0], *args) * weights).sum())

    with T.Tape() as tape:
        x = T.Tensor(x0.copy())
        loss = (op(x, *args) * weights).sum()
        grads = tape.backward(loss)
    numeric = T.numerical_gradient(scalar, [x0.copy()])[0]
    assert T.gradient_mismatch(grads[x], numeric) <= 1e-4


def test_composite_sigmoid_linear_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(4, 3))
    w0 = rng.normal(size=(3, 2))
    b0 = rng.normal(size=2)

    def scalar(arrays):
        w, b = arrays
        return float(T.sigmoid(T.linear(x, w, b)).sum())

    with T.Tape() as tape:
        w = T.Tensor(w0.copy())
        b = T.Tensor(b0.copy())
        loss = T.sigmoid(T.linear(x, w, b)).sum()
        grads = tape.backward(loss)
    num_w, num_b = T.numerical_gradient(scalar, [w0.copy(), b0.copy()])
    assert T.gradient_mismatch(grads[w], num_w) <= 1e-4
    assert T.gradient_mismatch(grads[b], num_b) <= 1e-4


def test_broadcast_arithmetic_gradients():
    rng = np.random.default_rng(5)
    a0 = rng.normal(size=(3, 4))
    b0 = rng.normal(size=(3, 1))

    def scalar(arrays):
        a, b = arrays
        return float(((a / (1.0 + np.exp(-b))) + 2.0 * b).sum())

    with T.Tape() as tape:
        a = T.Tensor(a0.copy())
        b = T.Tensor(b0.copy())
        loss = ((a / (1.0 + T.exp(-b))) + 2.0 * b).sum()
        grads = tape.backward(loss)
    num_a, num_b = T.numerical_gradient(scalar, [a0.copy(), b0.copy()])
    assert T.gradient_mismatch(grads[a], num_a) <= 1e-4
    assert T.gradient_mismatch(grads[b], num_b) <= 1e-4


def test_concat_splits_gradient():
    with T.Tape() as tape:
        a = T.Tensor(np.ones((2, 2)))
        b = T.Tensor(np.ones((2, 3)))
        out = T.concat([a, b], axis=1)
        weights = np.arange(10.0).reshape(2, 5)
        grads = tape.backward((out * weights).sum())
    np.testing.assert_array_equal(grads[a], weights[:, :2])
    np.testing.assert_array_equal(grads[b], weights[:, 2:])


def test_detach_returns_plain_values():
    x = T.Tensor(np.array([1.0, 2.0]))
    out = T.detach(x)
    assert isinstance(out, np.ndarray)
    np.testing.assert_array_equal(out, x.values)


def test_numpy_only_ops_stay_numpy():
    out = T.softmax(np.zeros((2, 3)))
    assert isinstance(out, np.ndarray)
    assert T.Tape.active() is None
