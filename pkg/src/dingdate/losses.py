"""Probabilistic classification losses over relation-graph marginals.

The era loss is a plain negative log marginal; the era-shape and
era-shape-characteristic losses are focal-type: each is damped by the
confidence the previous stage already reached, so attribute knowledge only
pushes where the era evidence is weak.  Plain cross-entropy and (multilabel)
focal losses supervise the individual heads.

All kernels accept numpy arrays or tape Tensors; with Tensors the gradients
with respect to the upstream activations fall out of Tape.backward.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ShapeMismatchError

PROB_FLOOR = 1e-12


class EmptyBatchError(ValueError):
    pass


@dataclass
class Hyperparams:
    """Loss-combination weights.

    alpha1/alpha2 are the focal decay exponents of the era->shape and
    shape->characteristic stages; beta balances the attribute stages inside
    the graph loss; lam trades off the per-head focal losses in the total.
    """

    alpha1: float = 2.0
    alpha2: float = 3.0
    beta: float = 0.001
    lam: float = 0.1
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    detach_focal: bool = True  # treat (1 - Pr)^alpha as a constant weight

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("decay exponents must be >= 0")
        if self.beta < 0 or self.lam < 0:
            raise ValueError("beta and lam must be >= 0")
        if self.focal_gamma < 0:
            raise ValueError("focal_gamma must be >= 0")
        if not 0.0 < self.focal_alpha <= 1.0:
            raise ValueError("focal_alpha must be in (0, 1]")


@dataclass
class SampleLabels:
    """Observed label indices of one sample, in view-local numbering.

    `era` indexes the era view (the observed period node), `era_shape` the
    era-shape view (the observed shape node), and `era_characteristics` the
    era-characteristic view (possibly empty set of characteristic nodes).
    """

    era: int
    era_shape: int
    era_characteristics: tuple[int, ...] = field(default_factory=tuple)


def _batch_size(x) -> int:
    values = x.values if isinstance(x, T.Tensor) else np.asarray(x)
    if values.ndim == 0:
        raise ShapeMismatchError("expected a batch vector, got a scalar")
    return values.shape[0]


def _require_batch(*xs):
    sizes = {_batch_size(x) for x in xs}
    if len(sizes) != 1:
        raise ShapeMismatchError(f"batch sizes differ: {sorted(sizes)}")
    if sizes == {0}:
        raise EmptyBatchError("empty batch")


def _safe_log(pr):
    return T.log(T.clip(pr, PROB_FLOOR, 1.0))


def _focal_factor(pr, exponent: float, detach: bool):
    base = T.detach(pr) if detach else pr
    return (1.0 - base) ** exponent


def loss_era(pr_era):
    """Mean negative log marginal of the observed era node."""
    _require_batch(pr_era)
    return -T.reduce_mean(_safe_log(pr_era))


def loss_era_shape(pr_era, pr_shape, alpha1: float, detach_focal: bool = True):
    """Era-shape stage: log marginal of the observed shape node, damped by
    how confidently the era stage already resolved."""
    _require_batch(pr_era, pr_shape)
    factor = _focal_factor(pr_era, alpha1, detach_focal)
    return -T.reduce_mean(factor * _safe_log(pr_shape))


def mean_observed_log(pr, mask) -> object:
    """Per-sample mean of log(pr) over the flagged entries of each row;
    rows with nothing flagged yield zero."""
    mask = np.asarray(mask, dtype=np.float64)
    pr_vals = T.values(pr)
    if mask.shape != pr_vals.shape:
        raise ShapeMismatchError(f"mask {mask.shape} for values {pr_vals.shape}")
    counts = mask.sum(axis=1)
    weights = np.divide(mask, np.maximum(counts, 1.0)[:, None])
    return T.reduce_sum(_safe_log(pr) * weights, axis=1)


def loss_era_char(pr_shape, pr_chars, char_mask, alpha2: float,
                  detach_focal: bool = True):
    """Characteristic stage: mean log marginal over the observed
    characteristic set, damped by the era-shape confidence.

    `pr_chars` holds the era-characteristic-view marginals [batch, k] and
    `char_mask` flags the observed set; rows with no observed characteristic
    contribute zero.
    """
    _require_batch(pr_shape, pr_chars)
    mean_log = mean_observed_log(pr_chars, char_mask)
    factor = _focal_factor(pr_shape, alpha2, detach_focal)
    return -T.reduce_mean(factor * mean_log)


def loss_graph(l_era, l_era_shape, l_era_char, beta: float):
    """Combined graph loss: the era term plus beta-weighted attribute stages."""
    return l_era + beta * (l_era_shape + l_era_char)


def cross_entropy(probs, labels):
    """Mean negative log likelihood of the true class under softmax outputs."""
    _require_batch(probs)
    values = probs.values if isinstance(probs, T.Tensor) else np.asarray(probs)
    idx = np.asarray(labels, dtype=np.intp)
    if values.ndim != 2 or idx.shape != (values.shape[0],):
        raise ShapeMismatchError(f"probs {values.shape} with labels {idx.shape}")
    return -T.reduce_mean(_safe_log(T.pick(probs, idx)))


def focal_loss(probs, labels, gamma: float, alpha: float):
    """Category-imbalance-robust classification loss: alpha (1-p_t)^gamma (-ln p_t)."""
    _require_batch(probs)
    values = probs.values if isinstance(probs, T.Tensor) else np.asarray(probs)
    idx = np.asarray(labels, dtype=np.intp)
    if values.ndim != 2 or idx.shape != (values.shape[0],):
        raise ShapeMismatchError(f"probs {values.shape} with labels {idx.shape}")
    p_t = T.pick(probs, idx)
    return -T.reduce_mean(alpha * (1.0 - p_t) ** gamma * _safe_log(p_t))


def ml_focal_loss(probs, labels, gamma: float, alpha: float):
    """Per-class binary focal loss for multilabel sigmoid outputs, averaged
    over classes and samples; alpha weights positives, (1-alpha) negatives."""
    _require_batch(probs)
    values = probs.values if isinstance(probs, T.Tensor) else np.asarray(probs)
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != values.shape:
        raise ShapeMismatchError(f"labels {y.shape} for outputs {values.shape}")
    pos = -(alpha * ((1.0 - probs) ** gamma) * _safe_log(probs))
    neg = -((1.0 - alpha) * (probs ** gamma) * _safe_log(1.0 - probs))
    return T.reduce_mean(y * pos + (1.0 - y) * neg)


def total_loss(l_graph, l_ce, l_focal, l_ml_focal, lam: float):
    """Graph loss plus cross-entropy plus lam-weighted per-head focal losses."""
    return l_graph + l_ce + lam * (l_focal + l_ml_focal)
