"""Training loop (Adam + cosine annealing + early stopping), evaluation
metrics, and the finite-difference gradient check."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import inference as I
from . import losses as L
from . import tensor as T
from .data import Dataset, LabelArrays, observed_label_arrays
from .graph import RelationGraph, Scope
from .losses import Hyperparams
from .model import (
    HeadOutputs,
    ModelConfig,
    ModelVariant,
    forward,
    init_model,
    predict,
    variant_from_dict,
)
from .tensor import ShapeMismatchError


class ConfigError(ValueError):
    pass


class EmptySplitError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 64
    batch_size: int = 32
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    early_stop_patience: int = 10  # epochs without a new best validation period OA
    hidden_dim: int = 64
    seed: int = 0
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    variant: ModelVariant = field(default_factory=ModelVariant)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.lr <= 0 or self.eps <= 0:
            raise ConfigError("lr and eps must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")
        if self.early_stop_patience < 0:
            raise ConfigError("early_stop_patience must be >= 0")
        if self.early_stop_patience > self.epochs:
            raise ConfigError("early_stop_patience cannot exceed epochs")
        if self.hidden_dim < 1:
            raise ConfigError("hidden_dim must be positive")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["variant"]["stage_order"] = list(self.variant.stage_order)
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        data = dict(payload)
        if "hyperparams" in data:
            data["hyperparams"] = Hyperparams(**data["hyperparams"])
        if "variant" in data:
            data["variant"] = variant_from_dict(data["variant"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# optimizer and schedule

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, T.Tensor]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.values) for k, p in params.items()},
            v={k: np.zeros_like(p.values) for k, p in params.items()},
        )


def adam_step(params: dict[str, T.Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, applied to the parameters in place."""
    state.t += 1
    correct1 = 1.0 - beta1 ** state.t
    correct2 = 1.0 - beta2 ** state.t
    for name in sorted(params):
        grad = grads.get(name)
        if grad is None:
            continue
        p = params[name]
        if grad.shape != p.values.shape:
            raise ShapeMismatchError(
                f"gradient {grad.shape} for parameter {name} {p.values.shape}"
            )
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * grad
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * grad * grad
        m_hat = state.m[name] / correct1
        v_hat = state.v[name] / correct2
        p.values = p.values - lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


def lr_schedule(epoch: int, total_epochs: int, lr_max: float) -> float:
    """Cosine annealing from lr_max at epoch 0 down to 0 at the final epoch."""
    if total_epochs <= 0:
        raise ConfigError("total_epochs must be positive")
    t = min(max(epoch, 0), total_epochs)
    return max(0.5 * lr_max * (1.0 + math.cos(math.pi * t / total_epochs)), 0.0)


# ---------------------------------------------------------------------------
# the objective

@dataclass
class ViewStructures:
    era: object
    era_shape: object
    era_char: object

    @classmethod
    def for_graph(cls, graph: RelationGraph) -> "ViewStructures":
        return cls(
            era=graph.view(Scope.ERA).structure(),
            era_shape=graph.view(Scope.ERA_SHAPE).structure(),
            era_char=graph.view(Scope.ERA_CHARACTERISTIC).structure(),
        )


def objective(outs: HeadOutputs, labels: LabelArrays, structs: ViewStructures,
              hp: Hyperparams, variant: ModelVariant):
    """Total loss of one batch plus its scalar components.

    The graph part chains the stages in `variant.stage_order`: each embedded
    attribute stage is damped by the confidence the previous stage reached on
    its observed node (era marginal first, then the attribute marginals),
    with the first embedded stage decayed by alpha1 and the second by alpha2.
    """
    comps: dict[str, float] = {}
    l_ce = L.cross_entropy(outs.period_softmax, labels.period_class)
    l_focal = L.focal_loss(
        outs.shape_softmax, labels.shape_class, hp.focal_gamma, hp.focal_alpha
    )
    has_chars = labels.char_multihot.shape[1] > 0
    if has_chars:
        l_ml = L.ml_focal_loss(
            outs.char_sigmoid, labels.char_multihot, hp.focal_gamma, hp.focal_alpha
        )
    else:
        l_ml = 0.0

    l_era = 0.0
    stage_losses = {"shape": 0.0, "characteristic": 0.0}
    if variant.graph_loss:
        era = I.view_log_marginals(structs.era, outs.dynasty_logits, outs.period_logits)
        pr_era = T.exp(T.pick(era.periods, labels.period_class))
        l_era = L.loss_era(pr_era)

        confidence = pr_era
        exponents = iter((hp.alpha1, hp.alpha2))
        for stage in variant.stage_order:
            if stage == "shape" and variant.shape_stage == "embed":
                lm = I.view_log_marginals(
                    structs.era_shape, outs.dynasty_logits, outs.period_logits,
                    outs.shape_logits,
                )
                pr_shape = T.exp(T.pick(lm.attributes, labels.shape_class))
                stage_losses["shape"] = L.loss_era_shape(
                    confidence, pr_shape, next(exponents), hp.detach_focal
                )
                confidence = pr_shape
            elif stage == "characteristic" and variant.char_stage == "embed" and has_chars:
                lm = I.view_log_marginals(
                    structs.era_char, outs.dynasty_logits, outs.period_logits,
                    outs.char_logits,
                )
                pr_chars = T.exp(lm.attributes)
                stage_losses["characteristic"] = L.loss_era_char(
                    confidence, pr_chars, labels.char_multihot,
                    next(exponents), hp.detach_focal,
                )
                confidence = _geometric_confidence(pr_chars, labels.char_multihot)

    l_graph = L.loss_graph(
        l_era, stage_losses["shape"], stage_losses["characteristic"], hp.beta
    )
    total = L.total_loss(l_graph, l_ce, l_focal, l_ml, hp.lam)

    comps["loss_total"] = _as_float(total)
    comps["loss_graph"] = _as_float(l_graph)
    comps["loss_era"] = _as_float(l_era)
    comps["loss_era_shape"] = _as_float(stage_losses["shape"])
    comps["loss_era_char"] = _as_float(stage_losses["characteristic"])
    comps["loss_ce"] = _as_float(l_ce)
    comps["loss_focal"] = _as_float(l_focal)
    comps["loss_ml_focal"] = _as_float(l_ml)
    return total, comps


def _geometric_confidence(pr_chars, mask: np.ndarray):
    """Per-sample geometric-mean marginal over the observed characteristic
    set; samples with no observed characteristic get confidence 0 so the
    next stage keeps full weight."""
    mean_log = L.mean_observed_log(pr_chars, mask)
    present = (np.asarray(mask).sum(axis=1) > 0).astype(np.float64)
    return T.exp(mean_log) * present


def _as_float(x) -> float:
    if isinstance(x, T.Tensor):
        return float(x.values)
    return float(x)


# ---------------------------------------------------------------------------
# metrics

@dataclass
class Metrics:
    dynasty_oa: float
    period_oa: float
    auprc_dynasty: float
    auprc_period: float
    per_class: dict

    def to_dict(self) -> dict:
        return asdict(self)


RECALL_GRID = np.linspace(0.0, 1.0, 101)


def average_precision_grid(scores: np.ndarray, positives: np.ndarray) -> float:
    """Area under the interpolated precision at the fixed 101-point recall
    grid (trapezoidal), for a one-vs-rest ranking."""
    order = np.argsort(-scores, kind="stable")
    y = positives[order].astype(np.float64)
    n_pos = y.sum()
    if n_pos == 0:
        return float("nan")
    tp = np.cumsum(y)
    recall = tp / n_pos
    precision = tp / np.arange(1, len(y) + 1)
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.minimum(np.searchsorted(recall, RECALL_GRID, side="left"), len(y) - 1)
    return float(np.trapezoid(interp[idx], RECALL_GRID))


def macro_auprc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Macro average over classes that occur in the split."""
    values = []
    for cls in range(scores.shape[1]):
        ap = average_precision_grid(scores[:, cls], labels == cls)
        if not math.isnan(ap):
            values.append(ap)
    return float(np.mean(values)) if values else 0.0


def _per_class_table(pred: np.ndarray, true: np.ndarray, names: list[str]) -> list[dict]:
    rows = []
    for cls, name in enumerate(names):
        support = int((true == cls).sum())
        predicted = int((pred == cls).sum())
        tp = int(((pred == cls) & (true == cls)).sum())
        rows.append(
            {
                "name": name,
                "precision": tp / predicted if predicted else 0.0,
                "recall": tp / support if support else 0.0,
                "support": support,
            }
        )
    return rows


def evaluate(params: dict, model_config: ModelConfig, variant: ModelVariant,
             dataset: Dataset, split: str, consistent_dynasty: bool = False,
             chunk: int = 512) -> Metrics:
    """Overall accuracy and macro AU(PRC) of both era granularities."""
    subset = dataset.subset(split)
    if len(subset) == 0:
        raise EmptySplitError(f"split {split!r} is empty")
    if subset.features is None:
        raise ConfigError("dataset carries no features")
    labels = observed_label_arrays(subset)
    graph = dataset.schema

    dyn_scores = np.empty((len(subset), graph.n_dynasties))
    per_scores = np.empty((len(subset), graph.n_periods))
    dyn_pred = np.empty(len(subset), dtype=np.intp)
    per_pred = np.empty(len(subset), dtype=np.intp)
    for start in range(0, len(subset), chunk):
        stop = min(start + chunk, len(subset))
        outs = forward(params, subset.features[start:stop], model_config, variant)
        dyn_scores[start:stop] = T.values(outs.dynasty_sigmoid)
        per_scores[start:stop] = T.values(outs.period_softmax)
        d, p = predict(outs, graph, consistent_dynasty=consistent_dynasty)
        dyn_pred[start:stop] = d
        per_pred[start:stop] = p

    dynasty_names = [graph.nodes[i].name for i in graph.dynasty_indices()]
    period_names = [graph.nodes[i].name for i in graph.period_indices()]
    return Metrics(
        dynasty_oa=float((dyn_pred == labels.dynasty_class).mean()),
        period_oa=float((per_pred == labels.period_class).mean()),
        auprc_dynasty=macro_auprc(dyn_scores, labels.dynasty_class),
        auprc_period=macro_auprc(per_scores, labels.period_class),
        per_class={
            "dynasty": _per_class_table(dyn_pred, labels.dynasty_class, dynasty_names),
            "period": _per_class_table(per_pred, labels.period_class, period_names),
        },
    )


# ---------------------------------------------------------------------------
# training loop

HISTORY_COLUMNS = (
    "epoch", "lr", "loss_total", "loss_graph", "loss_era", "loss_era_shape",
    "loss_era_char", "loss_ce", "loss_focal", "loss_ml_focal",
    "val_dynasty_oa", "val_period_oa", "val_auprc_dynasty", "val_auprc_period",
)


@dataclass
class TrainResult:
    params: dict[str, T.Tensor]
    model_config: ModelConfig
    variant: ModelVariant
    history: list[dict]
    best_epoch: int
    val_metrics: Metrics


def train(dataset: Dataset, config: TrainConfig,
          model_config: ModelConfig | None = None) -> TrainResult:
    """Minimize the total objective; early-stop on validation period OA and
    return the best-epoch parameters."""
    if dataset.features is None:
        raise ConfigError("dataset carries no features; nothing to train on")
    if all(tag is None for tag in dataset.splits):
        raise ConfigError("dataset has no split tags; run split_dataset first")
    train_set = dataset.subset("train")
    if len(train_set) == 0:
        raise EmptySplitError("train split is empty")
    if len(dataset.subset("val")) == 0:
        raise EmptySplitError("val split is empty")

    graph = dataset.schema
    if model_config is None:
        model_config = ModelConfig.for_graph(
            graph,
            feature_dim=dataset.features.shape[1],
            hidden_dim=config.hidden_dim,
            seed=config.seed,
        )
    if model_config.feature_dim != dataset.features.shape[1]:
        raise ConfigError("model feature_dim does not match the dataset features")

    variant = config.variant
    params = init_model(model_config, variant)
    state = AdamState.for_params(params)
    structs = ViewStructures.for_graph(graph)
    labels_all = observed_label_arrays(train_set)
    features = train_set.features
    n = len(train_set)
    rng = np.random.default_rng(config.seed)

    history: list[dict] = []
    best_epoch = -1
    best_oa = -1.0
    best_params: dict[str, np.ndarray] = {}
    since_best = 0

    for epoch in range(config.epochs):
        lr_t = lr_schedule(epoch, config.epochs, config.lr)
        order = rng.permutation(n)
        sums = {key: 0.0 for key in HISTORY_COLUMNS[2:10]}
        seen = 0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            batch_labels = LabelArrays(
                labels_all.dynasty_class[batch],
                labels_all.period_class[batch],
                labels_all.shape_class[batch],
                labels_all.char_multihot[batch],
            )
            with T.Tape() as tape:
                outs = forward(params, features[batch], model_config, variant)
                loss, comps = objective(outs, batch_labels, structs,
                                        config.hyperparams, variant)
                grads = tape.backward(loss)
            named = {
                name: grads[tensor]
                for name, tensor in params.items()
                if tensor in grads
            }
            adam_step(params, named, state, lr_t,
                      config.beta1, config.beta2, config.eps)
            for key in sums:
                sums[key] += comps[key] * len(batch)
            seen += len(batch)

        metrics = evaluate(params, model_config, variant, dataset, "val")
        row = {"epoch": epoch, "lr": lr_t}
        row.update({key: sums[key] / seen for key in sums})
        row.update(
            {
                "val_dynasty_oa": metrics.dynasty_oa,
                "val_period_oa": metrics.period_oa,
                "val_auprc_dynasty": metrics.auprc_dynasty,
                "val_auprc_period": metrics.auprc_period,
            }
        )
        history.append(row)

        if metrics.period_oa > best_oa:
            best_oa = metrics.period_oa
            best_epoch = epoch
            best_params = {k: p.values.copy() for k, p in params.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best > config.early_stop_patience:
                break

    for name, values in best_params.items():
        params[name].values = values
    final = evaluate(params, model_config, variant, dataset, "val")
    return TrainResult(
        params=params,
        model_config=model_config,
        variant=variant,
        history=history,
        best_epoch=best_epoch,
        val_metrics=final,
    )


def history_to_csv(history: list[dict]) -> str:
    lines = [",".join(HISTORY_COLUMNS)]
    for row in history:
        cells = []
        for key in HISTORY_COLUMNS:
            value = row[key]
            cells.append(str(value) if key == "epoch" else f"{value:.10g}")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# gradient checking

def gradient_check_report(seed: int = 0, instances: int = 5,
                          rel_tol: float = 1e-4, abs_tol: float = 1e-6) -> dict:
    """Compare tape gradients of the full objective against central finite
    differences, over both model parameters and raw head logits.

    Runs with the gradient-truncated fusion edge disabled and full gradients
    through the focal factors: in that configuration the tape gradient is the
    true derivative, which is what finite differences measure.  (Truncation
    and detached factors intentionally drop terms of the true derivative and
    are verified by their own semantic tests.)
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_site = ""
    checked = 0
    for instance in range(instances):
        graph, structs = _random_check_graph(rng)
        hp = Hyperparams(detach_focal=False)
        variant = ModelVariant(truncated_fusion=False)
        batch = 4
        labels = _random_labels(rng, graph, batch)

        # model parameters; redraw while any relu input sits close enough to
        # its kink for the finite-difference step to straddle it
        mc = ModelConfig.for_graph(graph, feature_dim=6, hidden_dim=5,
                                   seed=int(rng.integers(0, 2 ** 31)))
        variant_params = init_model(mc, variant)
        for _ in range(100):
            params = variant_params
            for p in params.values():
                p.values = rng.normal(0.0, 0.4, p.values.shape)
            x = rng.normal(0.0, 1.0, (batch, mc.feature_dim))
            if _relu_margin(params, x, mc) > 1e-3:
                break

        with T.Tape() as tape:
            outs = forward(params, x, mc, variant)
            loss, _ = objective(outs, labels, structs, hp, variant)
            grads = tape.backward(loss)

        names = sorted(params)
        arrays = [params[name].values for name in names]

        def param_loss(_arrays):
            outs_ = forward(params, x, mc, variant)
            value, _ = objective(outs_, labels, structs, hp, variant)
            return _as_float(value)

        numeric = T.numerical_gradient(param_loss, arrays)
        for name, num in zip(names, numeric):
            analytic = grads.get(params[name], np.zeros_like(num))
            err = T.gradient_mismatch(analytic, num, rel_tol, abs_tol)
            checked += num.size
            if err > worst:
                worst, worst_site = err, f"instance {instance}: param {name}"

        # raw head logits as leaves
        logits = [
            T.Tensor(rng.normal(0.0, 1.5, (batch, graph.n_dynasties))),
            T.Tensor(rng.normal(0.0, 1.5, (batch, graph.n_periods))),
            T.Tensor(rng.normal(0.0, 1.5, (batch, graph.m))),
            T.Tensor(rng.normal(0.0, 1.5, (batch, graph.k))),
        ]
        with T.Tape() as tape:
            outs = _outputs_from_logits(*logits)
            loss, _ = objective(outs, labels, structs, hp, variant)
            grads = tape.backward(loss)

        def logit_loss(arrays_):
            outs_ = _outputs_from_logits(*arrays_)
            value, _ = objective(outs_, labels, structs, hp, variant)
            return _as_float(value)

        numeric = T.numerical_gradient(logit_loss, [t.values for t in logits])
        for head, tensor, num in zip(
            ("dynasty", "period", "shape", "characteristic"), logits, numeric
        ):
            err = T.gradient_mismatch(grads[tensor], num, rel_tol, abs_tol)
            checked += num.size
            if err > worst:
                worst, worst_site = err, f"instance {instance}: {head} logits"

    return {
        "seed": seed,
        "instances": instances,
        "entries_checked": checked,
        "max_rel_error": worst,
        "worst_site": worst_site,
        "rel_tol": rel_tol,
        "abs_tol": abs_tol,
        "passed": worst <= rel_tol,
    }


def _relu_margin(params: dict, x: np.ndarray, config: ModelConfig) -> float:
    margin = np.inf
    for head in ("dynasty", "period", "shape", "characteristic"):
        pre = x @ params[f"{head}_w1"].values + params[f"{head}_b1"].values
        margin = min(margin, float(np.abs(pre).min()))
    return margin


def _outputs_from_logits(z_d, z_p, z_s, z_c) -> HeadOutputs:
    return HeadOutputs(
        dynasty_logits=z_d,
        period_logits=z_p,
        shape_logits=z_s,
        char_logits=z_c,
        dynasty_sigmoid=T.sigmoid(z_d),
        period_sigmoid=T.sigmoid(z_p),
        period_softmax=T.softmax(z_p),
        shape_sigmoid=T.sigmoid(z_s),
        shape_softmax=T.softmax(z_s),
        char_sigmoid=T.sigmoid(z_c),
    )


def _random_check_graph(rng: np.random.Generator):
    from .graph import Kind, build_graph

    nd = int(rng.integers(2, 4))
    np_ = int(rng.integers(nd, nd + 3))
    m = int(rng.integers(2, 4))
    k = int(rng.integers(2, 5))
    nodes = [(f"d{i}", Kind.DYNASTY) for i in range(nd)]
    edges = []
    for j in range(np_):
        nodes.append((f"p{j}", Kind.PERIOD))
        parent = j % nd
        edges.append((f"d{parent}", f"p{j}"))
    for s in range(m):
        nodes.append((f"s{s}", Kind.SHAPE))
        parents = {s % np_} | {int(p) for p in np.flatnonzero(rng.random(np_) < 0.3)}
        for p in sorted(parents):
            edges.append((f"p{p}", f"s{s}"))
    for c in range(k):
        nodes.append((f"c{c}", Kind.CHARACTERISTIC))
        parents = {c % np_} | {int(p) for p in np.flatnonzero(rng.random(np_) < 0.3)}
        for p in sorted(parents):
            edges.append((f"p{p}", f"c{c}"))
    graph = build_graph(nodes, edges)
    return graph, ViewStructures.for_graph(graph)


def _random_labels(rng: np.random.Generator, graph: RelationGraph, batch: int) -> LabelArrays:
    period = rng.integers(0, graph.n_periods, batch).astype(np.intp)
    dynasty = np.array(
        [graph.period_parent(graph.n_dynasties + int(p)) for p in period], dtype=np.intp
    )
    shape = rng.integers(0, graph.m, batch).astype(np.intp)
    chars = (rng.random((batch, graph.k)) < 0.4).astype(np.float64)
    return LabelArrays(dynasty, period, shape, chars)
