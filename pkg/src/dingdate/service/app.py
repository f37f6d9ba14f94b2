"""FastAPI service exposing the dating pipeline.

Every endpoint is stateless: datasets, graphs, and checkpoints travel inside
the request/response bodies, so identical requests always produce identical
responses (seeded generation and training included).
"""
from __future__ import annotations

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from .. import inference as I
from .. import tensor as T
from ..data import (
    Dataset,
    SynthConfig,
    dataset_from_rows,
    dataset_stats,
    record_to_dict,
    synth_generate,
)
from ..graph import RelationGraph, graph_from_spec, graph_to_spec
from ..model import checkpoint_from_dict, checkpoint_to_dict, forward, predict
from ..train import (
    TrainConfig,
    ViewStructures,
    evaluate,
    gradient_check_report,
    train,
)
from . import schemas as S


def payload_to_dataset(payload: S.DatasetPayload, graph: RelationGraph) -> Dataset:
    features = payload.features
    if features is not None and len(features) != len(payload.records):
        raise ValueError("feature rows do not align with records")
    rows = []
    for i, record in enumerate(payload.records):
        row = record.model_dump(exclude_none=True)
        if features is not None:
            row["features"] = features[i]
        rows.append((i + 1, row))
    return dataset_from_rows(rows, graph)


def dataset_to_payload(dataset: Dataset) -> S.DatasetPayload:
    records = [
        record_to_dict(record, split=dataset.splits[i])
        for i, record in enumerate(dataset.records)
    ]
    features = None if dataset.features is None else dataset.features.tolist()
    return S.DatasetPayload(records=records, features=features)


def stats_table(stats) -> str:
    rows = [
        ("attribute", stats.attribute),
        ("records", str(stats.n_records)),
        ("observations", str(stats.n_observations)),
        ("entropy H(D)", f"{stats.entropy_bits:.3f} bits"),
        ("conditional H(D|A)", f"{stats.conditional_entropy_bits:.3f} bits"),
        ("information gain", f"{stats.gain_bits:.3f} bits"),
    ]
    width = max(len(label) for label, _ in rows)
    return "\n".join(f"{label:<{width}}  {value}" for label, value in rows)


def create_app() -> FastAPI:
    app = FastAPI(
        title="dingdate",
        version=__version__,
        description="Multi-granularity dating of bronze dings over a "
        "knowledge-guided relation graph.",
    )

    @app.get("/health", response_model=S.HealthResponse)
    def health() -> S.HealthResponse:
        return S.HealthResponse(status="ok", version=__version__)

    @app.post("/synth", response_model=S.SynthResponse)
    def synth(request: S.SynthRequest) -> S.SynthResponse:
        try:
            config = SynthConfig(**request.config.model_dump())
            dataset, _ = synth_generate(config)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return S.SynthResponse(
            graph=S.GraphSpecModel(**graph_to_spec(dataset.schema)),
            dataset=dataset_to_payload(dataset),
        )

    @app.post("/train", response_model=S.TrainResponse)
    def train_endpoint(request: S.TrainRequest) -> S.TrainResponse:
        try:
            graph = graph_from_spec(request.graph.model_dump())
            dataset = payload_to_dataset(request.dataset, graph)
            config = TrainConfig.from_dict(request.config.model_dump())
            result = train(dataset, config)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return S.TrainResponse(
            checkpoint=checkpoint_to_dict(
                result.params, result.model_config, result.variant, graph
            ),
            history=result.history,
            best_epoch=result.best_epoch,
            val_metrics=S.MetricsModel(**result.val_metrics.to_dict()),
        )

    @app.post("/eval", response_model=S.EvalResponse)
    def eval_endpoint(request: S.EvalRequest) -> S.EvalResponse:
        try:
            params, config, variant, graph = checkpoint_from_dict(request.checkpoint)
            dataset = payload_to_dataset(request.dataset, graph)
            metrics = evaluate(
                params, config, variant, dataset, request.split,
                consistent_dynasty=request.consistent_dynasty,
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return S.EvalResponse(metrics=S.MetricsModel(**metrics.to_dict()))

    @app.post("/infer", response_model=S.InferResponse)
    def infer_endpoint(request: S.InferRequest) -> S.InferResponse:
        try:
            params, config, variant, graph = checkpoint_from_dict(request.checkpoint)
            features = np.asarray(request.features, dtype=np.float64)
            if features.ndim != 2 or features.shape[1] != config.feature_dim:
                raise ValueError(
                    f"features must be [n, {config.feature_dim}], got {features.shape}"
                )
            ids = request.ids
            if ids is not None and len(ids) != len(features):
                raise ValueError("ids do not align with features")
            predictions = _predict_samples(
                params, config, variant, graph, features, ids,
                request.consistent_dynasty,
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return S.InferResponse(predictions=predictions)

    @app.post("/stats", response_model=S.StatsResponse)
    def stats_endpoint(request: S.StatsRequest) -> S.StatsResponse:
        try:
            graph = graph_from_spec(request.graph.model_dump())
            dataset = payload_to_dataset(request.dataset, graph)
            stats = dataset_stats(dataset, request.attribute)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return S.StatsResponse(
            attribute=stats.attribute,
            entropy_bits=stats.entropy_bits,
            conditional_entropy_bits=stats.conditional_entropy_bits,
            gain_bits=stats.gain_bits,
            n_records=stats.n_records,
            n_observations=stats.n_observations,
            table=stats_table(stats),
        )

    @app.post("/gradcheck", response_model=S.GradcheckResponse)
    def gradcheck_endpoint(request: S.GradcheckRequest) -> S.GradcheckResponse:
        if request.instances < 1:
            raise HTTPException(status_code=422, detail="instances must be >= 1")
        report = gradient_check_report(seed=request.seed, instances=request.instances)
        return S.GradcheckResponse(**report)

    return app


def _predict_samples(params, config, variant, graph, features, ids,
                     consistent_dynasty) -> list[S.PredictionModel]:
    structs = ViewStructures.for_graph(graph)
    node_name = {node.index: node.name for node in graph.nodes}
    dynasty_names = [node_name[i] for i in graph.dynasty_indices()]
    period_names = [node_name[i] for i in graph.period_indices()]
    shape_names = [node_name[i] for i in graph.shape_indices()]
    char_names = [node_name[i] for i in graph.characteristic_indices()]

    predictions = []
    chunk = 512
    for start in range(0, len(features), chunk):
        stop = min(start + chunk, len(features))
        outs = forward(params, features[start:stop], config, variant)
        dyn_idx, per_idx = predict(outs, graph, consistent_dynasty=consistent_dynasty)
        z_d = T.values(outs.dynasty_logits)
        z_p = T.values(outs.period_logits)
        era = I.view_log_marginals(structs.era, z_d, z_p)
        shapes = I.view_log_marginals(
            structs.era_shape, z_d, z_p, T.values(outs.shape_logits)
        )
        chars = I.view_log_marginals(
            structs.era_char, z_d, z_p, T.values(outs.char_logits)
        )
        era_marg = np.exp(np.concatenate([era.dynasties, era.periods], axis=1))
        shape_marg = np.exp(shapes.attributes)
        char_marg = np.exp(chars.attributes)
        era_names = dynasty_names + period_names
        for row in range(stop - start):
            i = start + row
            predictions.append(
                S.PredictionModel(
                    id=ids[i] if ids is not None else f"sample-{i:06d}",
                    dynasty=dynasty_names[dyn_idx[row]],
                    period=period_names[per_idx[row]],
                    era_marginals={
                        name: float(era_marg[row, j])
                        for j, name in enumerate(era_names)
                    },
                    shape_marginals={
                        name: float(shape_marg[row, j])
                        for j, name in enumerate(shape_names)
                    },
                    characteristic_marginals={
                        name: float(char_marg[row, j])
                        for j, name in enumerate(char_names)
                    },
                )
            )
    return predictions


app = create_app()
