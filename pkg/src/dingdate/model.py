"""Four-head dating network over extracted features.

Two era heads (dynasty, period) exchange hidden features between their
layers: the dynasty hidden state is added into the period branch to enrich
it, and the period hidden state is added back into the dynasty branch through
a gradient-truncated edge, strengthening dynasty features without touching
period training.  Two attribute heads (shape, characteristic) are plain
stacks whose sigmoid outputs feed the relation graph.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .graph import RelationGraph, graph_from_spec, graph_to_spec


class BadConfigError(ValueError):
    pass


HEADS = ("dynasty", "period", "shape", "characteristic")

STAGE_MODES = ("embed", "concat", "off")


@dataclass
class ModelConfig:
    feature_dim: int
    hidden_dim: int
    n_dynasties: int
    n_periods: int
    n_shapes: int
    n_characteristics: int
    seed: int = 0

    def __post_init__(self):
        if self.feature_dim <= 0 or self.hidden_dim <= 0:
            raise BadConfigError("feature_dim and hidden_dim must be positive")
        if self.n_dynasties <= 0 or self.n_periods <= 0:
            raise BadConfigError("the model needs at least one dynasty and period")
        if self.n_shapes < 0 or self.n_characteristics < 0:
            raise BadConfigError("attribute counts cannot be negative")

    def head_width(self, head: str) -> int:
        return {
            "dynasty": self.n_dynasties,
            "period": self.n_periods,
            "shape": self.n_shapes,
            "characteristic": self.n_characteristics,
        }[head]

    @classmethod
    def for_graph(cls, graph: RelationGraph, feature_dim: int, hidden_dim: int,
                  seed: int = 0) -> "ModelConfig":
        return cls(
            feature_dim=feature_dim,
            hidden_dim=hidden_dim,
            n_dynasties=graph.n_dynasties,
            n_periods=graph.n_periods,
            n_shapes=graph.m,
            n_characteristics=graph.k,
            seed=seed,
        )


@dataclass
class ModelVariant:
    """Ablation switches mirroring the studied model variants."""

    mgm_fusion: bool = True            # exchange hidden features between era heads
    truncated_fusion: bool = True      # period -> dynasty gradient-truncated edge
    graph_loss: bool = True            # relation-graph objective on/off
    shape_stage: str = "embed"         # embed | concat | off
    char_stage: str = "embed"          # embed | concat | off
    stage_order: tuple[str, str] = ("shape", "characteristic")

    def __post_init__(self):
        if self.shape_stage not in STAGE_MODES or self.char_stage not in STAGE_MODES:
            raise BadConfigError(f"stage modes must be one of {STAGE_MODES}")
        if sorted(self.stage_order) != ["characteristic", "shape"]:
            raise BadConfigError("stage_order must permute ('shape', 'characteristic')")
        self.stage_order = tuple(self.stage_order)


@dataclass
class HeadOutputs:
    """Per-head logits and projections for one batch."""

    dynasty_logits: object
    period_logits: object
    shape_logits: object
    char_logits: object
    dynasty_sigmoid: object
    period_sigmoid: object
    period_softmax: object
    shape_sigmoid: object
    shape_softmax: object
    char_sigmoid: object


def _period_input_width(config: ModelConfig, variant: ModelVariant) -> int:
    mult = 1
    if variant.shape_stage == "concat":
        mult += 1
    if variant.char_stage == "concat":
        mult += 1
    return config.hidden_dim * mult


def init_model(config: ModelConfig, variant: ModelVariant | None = None) -> dict[str, T.Tensor]:
    """Deterministic Glorot-uniform weights, zero biases, keyed '<head>_{w,b}{1,2}'."""
    variant = variant or ModelVariant()
    rng = np.random.default_rng(config.seed)

    def glorot(fan_in: int, fan_out: int) -> np.ndarray:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    params: dict[str, T.Tensor] = {}
    for head in HEADS:
        out = config.head_width(head)
        in2 = _period_input_width(config, variant) if head == "period" else config.hidden_dim
        params[f"{head}_w1"] = T.Tensor(glorot(config.feature_dim, config.hidden_dim))
        params[f"{head}_b1"] = T.Tensor(np.zeros(config.hidden_dim))
        params[f"{head}_w2"] = T.Tensor(glorot(in2, out))
        params[f"{head}_b2"] = T.Tensor(np.zeros(out))
    return params


def forward(params: dict[str, T.Tensor], features, config: ModelConfig,
            variant: ModelVariant | None = None) -> HeadOutputs:
    """Run the four heads; `features` is [batch, feature_dim]."""
    variant = variant or ModelVariant()
    x = features
    hidden = {
        head: T.relu(T.linear(x, params[f"{head}_w1"], params[f"{head}_b1"]))
        for head in HEADS
    }

    if variant.mgm_fusion:
        period_hidden = T.add(hidden["period"], hidden["dynasty"])
        if variant.truncated_fusion:
            dynasty_hidden = T.stop_grad_add(hidden["dynasty"], hidden["period"])
        else:
            dynasty_hidden = hidden["dynasty"]
    else:
        period_hidden = hidden["period"]
        dynasty_hidden = hidden["dynasty"]

    period_in = [period_hidden]
    if variant.shape_stage == "concat":
        period_in.append(hidden["shape"])
    if variant.char_stage == "concat":
        period_in.append(hidden["characteristic"])
    period_input = period_in[0] if len(period_in) == 1 else T.concat(period_in, axis=1)

    z_d = T.linear(dynasty_hidden, params["dynasty_w2"], params["dynasty_b2"])
    z_p = T.linear(period_input, params["period_w2"], params["period_b2"])
    z_s = T.linear(hidden["shape"], params["shape_w2"], params["shape_b2"])
    z_c = T.linear(hidden["characteristic"], params["characteristic_w2"],
                   params["characteristic_b2"])

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


def predict(outputs: HeadOutputs, graph: RelationGraph | None = None,
            consistent_dynasty: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Argmax decisions (ties to the lowest index).

    With consistent_dynasty=True the dynasty is derived from the predicted
    period's parent instead of the dynasty head.
    """
    period_scores = _values(outputs.period_softmax)
    dynasty_scores = _values(outputs.dynasty_sigmoid)
    period = period_scores.argmax(axis=1)
    if consistent_dynasty:
        if graph is None:
            raise BadConfigError("consistent_dynasty requires the relation graph")
        parent = np.array(
            [graph.period_parent(p) for p in graph.period_indices()], dtype=np.intp
        )
        dynasty = parent[period]
    else:
        dynasty = dynasty_scores.argmax(axis=1)
    return dynasty.astype(np.intp), period.astype(np.intp)


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, T.Tensor) else np.asarray(x)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def checkpoint_to_dict(params: dict[str, T.Tensor], config: ModelConfig,
                       variant: ModelVariant, graph: RelationGraph) -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "model": asdict(config),
        "variant": _variant_to_dict(variant),
        "graph": graph_to_spec(graph),
        "params": {k: v.values.tolist() for k, v in sorted(params.items())},
    }


def checkpoint_from_dict(payload: dict):
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise BadConfigError(f"unsupported checkpoint version {version!r}")
    config = ModelConfig(**payload["model"])
    variant = variant_from_dict(payload["variant"])
    graph = graph_from_spec(payload["graph"])
    params = {
        k: T.Tensor(np.asarray(v, dtype=np.float64))
        for k, v in payload["params"].items()
    }
    expected = set(init_model(config, variant))
    if set(params) != expected:
        raise BadConfigError("checkpoint parameter names do not match the config")
    return params, config, variant, graph


def _variant_to_dict(variant: ModelVariant) -> dict:
    data = asdict(variant)
    data["stage_order"] = list(variant.stage_order)
    return data


def variant_from_dict(data: dict) -> ModelVariant:
    kwargs = dict(data)
    if "stage_order" in kwargs:
        kwargs["stage_order"] = tuple(kwargs["stage_order"])
    return ModelVariant(**kwargs)


def save_checkpoint(path: str | Path, params, config, variant, graph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint_to_dict(params, config, variant, graph), fh)
        fh.write("\n")


def load_checkpoint(path: str | Path):
    with open(path, "r", encoding="utf-8") as fh:
        return checkpoint_from_dict(json.load(fh))
