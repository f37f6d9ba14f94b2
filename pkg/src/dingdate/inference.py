"""Exact inference over legal assignments of a relation-graph view.

The unnormalized joint of an assignment is the Bernoulli product of the
per-node activations, so everything factorizes over the dynasty/period/
attribute hierarchy.  Writing z_i for the logit of node i (the log-odds of
its activation), all sums collapse to structured log-sum-exp expressions,
giving the log partition function and every node marginal in closed form.
A brute-force enumeration oracle over the same legal sets is kept alongside
for verification.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .graph import (
    ENUMERATION_CAP,
    GraphError,
    GraphView,
    NodeId,
    Scope,
    TooLargeError,
    ViewStructure,
    all_assignments,
    is_legal,
    legal_mask,
)

EPSILON = 1e-7


class IllegalAssignmentError(ValueError):
    pass


class NodeNotInViewError(ValueError):
    pass


@dataclass
class NodeActivations:
    """Per-node activation probabilities over the whole graph, in node order."""

    p: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.p.ndim != 1:
            raise ValueError("activations must be a flat vector over graph nodes")
        if np.any(self.p < 0.0) or np.any(self.p > 1.0):
            raise ValueError("activations must lie in [0, 1]")

    def clamped(self) -> np.ndarray:
        return np.clip(self.p, EPSILON, 1.0 - EPSILON)

    def logits(self) -> np.ndarray:
        q = self.clamped()
        return np.log(q) - np.log1p(-q)


@dataclass
class InferenceResult:
    log_z: float
    marginals: np.ndarray  # over the view's nodes, in view order


@dataclass
class LogMarginals:
    """Batched log-scale inference output; entries are [batch, nodes] arrays
    (or Tensors when computed on a tape)."""

    log_s: object  # [b, 1] log of the partition sum without the (1-p) prefactor
    dynasties: object  # [b, n_dynasties]
    periods: object  # [b, n_periods]
    attributes: object | None  # [b, n_attributes] for attribute views


def view_log_marginals(struct: ViewStructure, z_dyn, z_per, z_attr=None) -> LogMarginals:
    """Closed-form log marginals for one view, batched over rows.

    Inputs are node logits (Tensor or ndarray) shaped [batch, count]; gradients
    flow through every output when the inputs are tape-recorded Tensors.
    """
    A = struct.parent_onehot
    full = np.ones((1, struct.n_dynasties + struct.n_periods), dtype=np.float64)
    z_parent = T.matmul(z_dyn, A)
    pair = z_parent + z_per

    if struct.scope is Scope.ERA:
        log_s = T.masked_logsumexp(
            T.concat([z_dyn, pair], axis=1), full, include_unit=True
        )
        inner = T.masked_logsumexp(z_per, A, include_unit=True)
        return LogMarginals(
            log_s=log_s,
            dynasties=z_dyn + inner - log_s,
            periods=pair - log_s,
            attributes=None,
        )

    if struct.attr_parents is None:
        raise GraphError("attribute view structure is missing its incidence matrix")
    M = struct.attr_parents  # [n_periods, n_attributes]

    if struct.scope is Scope.ERA_SHAPE:
        # shapes are mutually exclusive below their period: 1 + sum of odds
        w = T.masked_logsumexp(z_attr, M, include_unit=True)
        per_term = pair + w
        log_s = T.masked_logsumexp(
            T.concat([z_dyn, per_term], axis=1), full, include_unit=True
        )
        inner = T.masked_logsumexp(z_per + w, A, include_unit=True)
        attr_marg = z_attr + T.masked_logsumexp(pair, M.T, include_unit=False) - log_s
        return LogMarginals(
            log_s=log_s,
            dynasties=z_dyn + inner - log_s,
            periods=per_term - log_s,
            attributes=attr_marg,
        )

    # characteristics are independent below their period: product of (1 + odds)
    v = T.matmul(T.softplus(z_attr), M.T)
    per_term = pair + v
    log_s = T.masked_logsumexp(
        T.concat([z_dyn, per_term], axis=1), full, include_unit=True
    )
    inner = T.masked_logsumexp(z_per + v, A, include_unit=True)
    attr_marg = (
        (z_attr - T.softplus(z_attr))
        + T.masked_logsumexp(per_term, M.T, include_unit=False)
        - log_s
    )
    return LogMarginals(
        log_s=log_s,
        dynasties=z_dyn + inner - log_s,
        periods=per_term - log_s,
        attributes=attr_marg,
    )


def _view_logits(view: GraphView, acts: NodeActivations):
    z = acts.logits()
    g = view.graph
    z_dyn = z[g.dynasty_indices()][None, :]
    z_per = z[g.period_indices()][None, :]
    if view.scope is Scope.ERA_SHAPE:
        z_attr = z[g.shape_indices()][None, :]
    elif view.scope is Scope.ERA_CHARACTERISTIC:
        z_attr = z[g.characteristic_indices()][None, :]
    else:
        z_attr = None
    return z_dyn, z_per, z_attr


def infer(view: GraphView, acts: NodeActivations) -> InferenceResult:
    """Factorized log partition function and all node marginals of a view."""
    z_dyn, z_per, z_attr = _view_logits(view, acts)
    lm = view_log_marginals(view.structure(), z_dyn, z_per, z_attr)
    parts = [np.exp(lm.dynasties), np.exp(lm.periods)]
    if lm.attributes is not None:
        parts.append(np.exp(lm.attributes))
    marginals = np.concatenate(parts, axis=1)[0]
    q = acts.clamped()[view.node_indices]
    log_c0 = float(np.log1p(-q).sum())
    return InferenceResult(log_z=log_c0 + float(lm.log_s[0, 0]), marginals=marginals)


def partition_function(view: GraphView, acts: NodeActivations) -> float:
    """log Z: the log-sum of unnormalized joints over all legal assignments."""
    return infer(view, acts).log_z


def marginal(view: GraphView, acts: NodeActivations, node: NodeId | int) -> float:
    """Pr(node = 1) under the normalized distribution over legal assignments."""
    try:
        local = view.local_index(node)
    except GraphError as exc:
        raise NodeNotInViewError(str(exc)) from None
    return float(infer(view, acts).marginals[local])


def joint_probability(view: GraphView, acts: NodeActivations, assignment) -> float:
    """Unnormalized joint probability of one legal assignment."""
    if not is_legal(view, assignment):
        raise IllegalAssignmentError(f"assignment {tuple(assignment)} is not legal")
    bits = np.asarray(assignment, dtype=np.float64)
    q = acts.clamped()[view.node_indices]
    log_joint = float((bits * np.log(q) + (1.0 - bits) * np.log1p(-q)).sum())
    return float(np.exp(log_joint))


def oracle_inference(
    view: GraphView, acts: NodeActivations, cap: int = ENUMERATION_CAP
) -> InferenceResult:
    """Brute-force reference: explicit summation over every legal assignment."""
    n = len(view)
    if n > cap:
        raise TooLargeError(f"view has {n} nodes; enumeration cap is {cap}")
    bits = all_assignments(n).astype(np.float64)
    mask = legal_mask(view, bits)
    bits = bits[mask]
    q = acts.clamped()[view.node_indices]
    log_w = bits @ np.log(q) + (1.0 - bits) @ np.log1p(-q)
    log_z = _logsumexp(log_w)
    marginals = np.empty(n, dtype=np.float64)
    for i in range(n):
        on = log_w[bits[:, i] > 0]
        marginals[i] = np.exp(_logsumexp(on) - log_z) if on.size else 0.0
    return InferenceResult(log_z=float(log_z), marginals=marginals)


def _logsumexp(values: np.ndarray) -> float:
    hi = values.max()
    return float(hi + np.log(np.exp(values - hi).sum()))
