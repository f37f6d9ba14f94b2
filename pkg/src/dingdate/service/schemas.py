"""Pydantic request/response models for the HTTP service."""
from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field


class PeriodEntry(BaseModel):
    name: str
    parent: str


class AttributeEntry(BaseModel):
    name: str
    parent_periods: list[str]


class GraphSpecModel(BaseModel):
    dynasties: list[str]
    periods: list[PeriodEntry]
    shapes: list[AttributeEntry] = Field(default_factory=list)
    characteristics: list[AttributeEntry] = Field(default_factory=list)


class RecordModel(BaseModel):
    id: str
    dynasty: str
    period: str
    shape: str
    characteristics: list[str] = Field(default_factory=list)
    bboxes: list[tuple[str, float, float, float, float]] | None = None
    source: dict[str, str] | None = None
    split: Literal["train", "val", "test"] | None = None


class DatasetPayload(BaseModel):
    records: list[RecordModel]
    features: list[list[float]] | None = None


class SynthConfigModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_dynasties: int = 3
    n_periods: int = 11
    n_shapes: int = 8
    n_characteristics: int = 16
    samples: int = 1000
    feature_dim: int = 64
    noise: float = 0.5
    imbalance: float = 0.0
    era_scale: float = 1.0
    shape_scale: float = 1.0
    char_scale: float = 1.0
    extra_parent_rate: float = 0.25
    period_prior: list[float] | None = None
    shape_given_period: list[list[float]] | None = None
    char_given_period: list[list[float]] | None = None
    split_ratios: tuple[float, float, float] = (4.0, 1.0, 5.0)
    tag_splits: bool = True
    seed: int = 0


class SynthRequest(BaseModel):
    config: SynthConfigModel


class SynthResponse(BaseModel):
    graph: GraphSpecModel
    dataset: DatasetPayload


class HyperparamsModel(BaseModel):
    alpha1: float = 2.0
    alpha2: float = 3.0
    beta: float = 0.001
    lam: float = 0.1
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    detach_focal: bool = True


class VariantModel(BaseModel):
    mgm_fusion: bool = True
    truncated_fusion: bool = True
    graph_loss: bool = True
    shape_stage: Literal["embed", "concat", "off"] = "embed"
    char_stage: Literal["embed", "concat", "off"] = "embed"
    stage_order: tuple[str, str] = ("shape", "characteristic")


class TrainConfigModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = 64
    batch_size: int = 32
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    early_stop_patience: int = 10
    hidden_dim: int = 64
    seed: int = 0
    hyperparams: HyperparamsModel = Field(default_factory=HyperparamsModel)
    variant: VariantModel = Field(default_factory=VariantModel)


class TrainRequest(BaseModel):
    graph: GraphSpecModel
    dataset: DatasetPayload
    config: TrainConfigModel = Field(default_factory=TrainConfigModel)


class MetricsModel(BaseModel):
    dynasty_oa: float
    period_oa: float
    auprc_dynasty: float
    auprc_period: float
    per_class: dict[str, list[dict[str, Any]]]


class TrainResponse(BaseModel):
    checkpoint: dict[str, Any]
    history: list[dict[str, Any]]
    best_epoch: int
    val_metrics: MetricsModel


class EvalRequest(BaseModel):
    checkpoint: dict[str, Any]
    dataset: DatasetPayload
    split: Literal["train", "val", "test"] = "test"
    consistent_dynasty: bool = False


class EvalResponse(BaseModel):
    metrics: MetricsModel


class InferRequest(BaseModel):
    checkpoint: dict[str, Any]
    features: list[list[float]]
    ids: list[str] | None = None
    consistent_dynasty: bool = False


class PredictionModel(BaseModel):
    id: str
    dynasty: str
    period: str
    era_marginals: dict[str, float]
    shape_marginals: dict[str, float]
    characteristic_marginals: dict[str, float]


class InferResponse(BaseModel):
    predictions: list[PredictionModel]


class StatsRequest(BaseModel):
    graph: GraphSpecModel
    dataset: DatasetPayload
    attribute: Literal["shape", "characteristic"]


class StatsResponse(BaseModel):
    attribute: str
    entropy_bits: float
    conditional_entropy_bits: float
    gain_bits: float
    n_records: int
    n_observations: int
    table: str


class GradcheckRequest(BaseModel):
    seed: int = 0
    instances: int = 5


class GradcheckResponse(BaseModel):
    seed: int
    instances: int
    entries_checked: int
    max_rel_error: float
    worst_site: str
    rel_tol: float
    abs_tol: float
    passed: bool


class HealthResponse(BaseModel):
    status: str
    version: str
