import math

import numpy as np
import pytest

from dingdate import losses as L
from dingdate import tensor as T


def test_loss_era_perfect_marginals_zero():
    assert float(L.loss_era(np.array([1.0, 1.0]))) == pytest.approx(0.0)


def test_loss_era_exp_minus_one():
    assert float(L.loss_era(np.array([math.exp(-1.0)]))) == pytest.approx(1.0)


def test_loss_era_two_sample_hand_value():
    value = float(L.loss_era(np.array([0.5, 0.25])))
    assert value == pytest.approx(1.0397, abs=1e-4)


def test_loss_era_empty_batch():
    with pytest.raises(L.EmptyBatchError):
        L.loss_era(np.array([]))


def test_loss_era_shape_zero_when_era_confident():
    value = L.loss_era_shape(np.array([1.0]), np.array([0.123]), alpha1=2.0)
    assert float(value) == pytest.approx(0.0)


def test_loss_era_shape_hand_value():
    value = L.loss_era_shape(np.array([0.5]), np.array([0.5]), alpha1=2.0)
    assert float(value) == pytest.approx(0.1733, abs=1e-4)


def test_loss_era_shape_alpha_zero_reduces_to_log_loss():
    pr_shape = np.array([0.3, 0.8])
    value = L.loss_era_shape(np.array([0.9, 0.2]), pr_shape, alpha1=0.0)
    assert float(value) == pytest.approx(float(L.loss_era(pr_shape)))


def test_loss_era_char_hand_value():
    value = L.loss_era_char(
        np.array([0.5]), np.array([[0.5]]), np.array([[1.0]]), alpha2=3.0
    )
    assert float(value) == pytest.approx(0.0866, abs=1e-4)


def test_loss_era_char_zero_when_shape_confident():
    value = L.loss_era_char(
        np.array([1.0]), np.array([[0.2]]), np.array([[1.0]]), alpha2=3.0
    )
    assert float(value) == pytest.approx(0.0)


def test_loss_era_char_empty_set_contributes_zero():
    value = L.loss_era_char(
        np.array([0.5, 0.5]),
        np.array([[0.5, 0.4], [0.9, 0.1]]),
        np.array([[0.0, 0.0], [0.0, 0.0]]),
        alpha2=3.0,
    )
    assert float(value) == pytest.approx(0.0)


def test_loss_graph_arithmetic():
    assert float(L.loss_graph(1.0, 2.0, 3.0, beta=0.001)) == pytest.approx(1.005)
    assert float(L.loss_graph(1.0, 2.0, 3.0, beta=0.0)) == pytest.approx(1.0)
    assert float(L.loss_graph(0.0, 0.0, 0.0, beta=0.5)) == pytest.approx(0.0)


def test_cross_entropy_one_hot_zero():
    probs = np.zeros((1, 4))
    probs[0, 2] = 1.0
    assert float(L.cross_entropy(probs, np.array([2]))) == pytest.approx(0.0, abs=1e-9)


def test_cross_entropy_uniform_eleven():
    probs = np.full((3, 11), 1.0 / 11.0)
    value = float(L.cross_entropy(probs, np.array([0, 5, 10])))
    assert value == pytest.approx(math.log(11.0))


def test_cross_entropy_half():
    probs = np.array([[0.5, 0.5]])
    assert float(L.cross_entropy(probs, np.array([0]))) == pytest.approx(0.6931, abs=1e-4)


def test_cross_entropy_shape_mismatch():
    with pytest.raises(L.ShapeMismatchError):
        L.cross_entropy(np.full((2, 3), 1 / 3), np.array([0, 1, 2]))


def test_focal_loss_perfect_prediction_zero():
    probs = np.zeros((1, 3))
    probs[0, 1] = 1.0
    assert float(L.focal_loss(probs, np.array([1]), 2.0, 0.25)) == pytest.approx(0.0, abs=1e-9)


def test_focal_loss_degenerates_to_cross_entropy():
    rng = np.random.default_rng(0)
    probs = rng.dirichlet(np.ones(5), size=4)
    labels = np.array([0, 1, 2, 3])
    focal = float(L.focal_loss(probs, labels, gamma=0.0, alpha=1.0))
    assert focal == pytest.approx(float(L.cross_entropy(probs, labels)))


def test_focal_loss_hand_value():
    probs = np.array([[0.5, 0.5]])
    value = float(L.focal_loss(probs, np.array([0]), gamma=2.0, alpha=0.25))
    assert value == pytest.approx(0.0433, abs=1e-4)


def test_ml_focal_perfect_zero():
    probs = np.array([[1.0, 0.0], [0.0, 1.0]])
    labels = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert float(L.ml_focal_loss(probs, labels, 2.0, 0.25)) == pytest.approx(0.0, abs=1e-9)


def test_ml_focal_hand_value():
    value = float(L.ml_focal_loss(np.array([[0.5]]), np.array([[1.0]]), 2.0, 0.25))
    assert value == pytest.approx(0.0433, abs=1e-4)


def test_ml_focal_all_zero_labels_and_outputs():
    value = float(L.ml_focal_loss(np.zeros((2, 3)), np.zeros((2, 3)), 2.0, 0.25))
    assert value == pytest.approx(0.0, abs=1e-9)


def test_total_loss_arithmetic():
    assert float(L.total_loss(1.0, 2.0, 3.0, 4.0, lam=0.1)) == pytest.approx(3.7)
    assert float(L.total_loss(1.0, 2.0, 3.0, 4.0, lam=0.0)) == pytest.approx(3.0)
    assert float(L.total_loss(0.0, 0.0, 0.0, 0.0, lam=0.1)) == pytest.approx(0.0)


def test_losses_nonnegative_and_finite_under_random_inputs():
    rng = np.random.default_rng(1)
    for _ in range(50):
        pr = rng.uniform(0.0, 1.0, 8)
        pr2 = rng.uniform(0.0, 1.0, 8)
        chars = rng.uniform(0.0, 1.0, (8, 5))
        mask = (rng.random((8, 5)) < 0.5).astype(float)
        for value in (
            L.loss_era(np.clip(pr, 1e-9, 1.0)),
            L.loss_era_shape(pr, pr2, 2.0),
            L.loss_era_char(pr, chars, mask, 3.0),
        ):
            value = float(value)
            assert value >= -1e-12 and np.isfinite(value)


def test_focal_monotone_in_era_confidence():
    # for a fixed shape marginal, the stage term never grows as era confidence grows
    pr_shape = np.array([0.4])
    values = [
        float(L.loss_era_shape(np.array([p]), pr_shape, alpha1=2.0))
        for p in np.linspace(0.0, 1.0, 21)
    ]
    assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))


def test_focal_decay_suppression():
    # confident era (0.99) keeps at most 1% of the half-confidence term
    pr_shape = np.array([0.5])
    hi = float(L.loss_era_shape(np.array([0.99]), pr_shape, alpha1=2.0))
    mid = float(L.loss_era_shape(np.array([0.5]), pr_shape, alpha1=2.0))
    assert hi <= 0.01 * mid
    chars = np.array([[0.5]])
    mask = np.array([[1.0]])
    hi = float(L.loss_era_char(np.array([0.99]), chars, mask, alpha2=3.0))
    mid = float(L.loss_era_char(np.array([0.5]), chars, mask, alpha2=3.0))
    assert hi <= 0.01 * mid


def test_stage_order_asymmetry_is_representable():
    # swapping which marginal is damped and which is scored changes the value
    pr_a = np.array([0.3, 0.7])
    pr_b = np.array([0.6, 0.2])
    esc = float(L.loss_era_shape(pr_a, pr_b, alpha1=2.0))
    ecs = float(L.loss_era_shape(pr_b, pr_a, alpha1=2.0))
    assert abs(esc - ecs) > 1e-6


def test_detached_focal_factor_blocks_gradient():
    with T.Tape() as tape:
        pr_era = T.Tensor(np.array([0.5]))
        pr_shape = T.Tensor(np.array([0.5]))
        value = L.loss_era_shape(pr_era, pr_shape, alpha1=2.0, detach_focal=True)
        grads = tape.backward(value)
    assert pr_era not in grads
    assert pr_shape in grads

    with T.Tape() as tape:
        pr_era = T.Tensor(np.array([0.5]))
        pr_shape = T.Tensor(np.array([0.5]))
        value = L.loss_era_shape(pr_era, pr_shape, alpha1=2.0, detach_focal=False)
        grads = tape.backward(value)
    assert pr_era in grads and abs(grads[pr_era][0]) > 0


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    pr0 = rng.uniform(0.2, 0.8, 6)
    chars0 = rng.uniform(0.2, 0.8, (6, 4))
    mask = (rng.random((6, 4)) < 0.6).astype(float)

    def scalar(arrays):
        pr, chars = arrays
        total = (
            float(L.loss_era(pr))
            + float(L.loss_era_shape(pr, pr, 2.0, detach_focal=False))
            + float(L.loss_era_char(pr, chars, mask, 3.0, detach_focal=False))
        )
        return total

    with T.Tape() as tape:
        pr = T.Tensor(pr0.copy())
        chars = T.Tensor(chars0.copy())
        value = (
            L.loss_era(pr)
            + L.loss_era_shape(pr, pr, 2.0, detach_focal=False)
            + L.loss_era_char(pr, chars, mask, 3.0, detach_focal=False)
        )
        grads = tape.backward(value)
    num_pr, num_chars = T.numerical_gradient(scalar, [pr0.copy(), chars0.copy()])
    assert T.gradient_mismatch(grads[pr], num_pr) <= 1e-4
    assert T.gradient_mismatch(grads[chars], num_chars) <= 1e-4


def test_hyperparams_validation():
    L.Hyperparams()  # defaults fine
    with pytest.raises(ValueError):
        L.Hyperparams(alpha1=-1.0)
    with pytest.raises(ValueError):
        L.Hyperparams(focal_alpha=0.0)
    with pytest.raises(ValueError):
        L.Hyperparams(beta=-0.1)
