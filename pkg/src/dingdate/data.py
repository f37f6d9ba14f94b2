"""Dataset schema, JSON Lines loading, stratified splitting, label statistics,
and the synthetic desk-scale data generator."""
from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .graph import Kind, RelationGraph, Scope, graph_from_spec
from .losses import SampleLabels

SPLITS = ("train", "val", "test")


class ParseError(ValueError):
    pass


class SchemaViolationError(ValueError):
    pass


class EmptyDatasetError(ValueError):
    pass


class BadConfigError(ValueError):
    pass


@dataclass
class DingRecord:
    """One artifact: era labels, single shape, characteristic set, metadata.

    Bounding boxes and source entries are carried as opaque metadata; they
    take no part in training or statistics.
    """

    id: str
    dynasty: str
    period: str
    shape: str
    characteristics: tuple[str, ...] = ()
    bboxes: tuple[tuple, ...] | None = None  # (characteristic, x, y, w, h)
    source: dict | None = None


@dataclass
class Dataset:
    records: list[DingRecord]
    schema: RelationGraph
    splits: list[str | None] = field(default_factory=list)
    features: np.ndarray | None = None

    def __post_init__(self):
        if not self.splits:
            self.splits = [None] * len(self.records)
        if len(self.splits) != len(self.records):
            raise SchemaViolationError("split tags do not align with records")
        if self.features is not None and len(self.features) != len(self.records):
            raise SchemaViolationError("feature rows do not align with records")

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, split: str) -> "Dataset":
        keep = [i for i, tag in enumerate(self.splits) if tag == split]
        return Dataset(
            records=[self.records[i] for i in keep],
            schema=self.schema,
            splits=[split] * len(keep),
            features=None if self.features is None else self.features[keep],
        )


@dataclass
class DatasetStats:
    """Entropy bookkeeping for one attribute, base-2 logs throughout."""

    attribute: str
    entropy_bits: float
    conditional_entropy_bits: float
    gain_bits: float
    n_records: int
    n_observations: int


# ---------------------------------------------------------------------------
# JSON Lines I/O

def record_to_dict(record: DingRecord, split: str | None = None,
                   features: np.ndarray | None = None) -> dict:
    out: dict = {
        "id": record.id,
        "dynasty": record.dynasty,
        "period": record.period,
        "shape": record.shape,
        "characteristics": list(record.characteristics),
    }
    if record.bboxes is not None:
        out["bboxes"] = [list(box) for box in record.bboxes]
    if record.source is not None:
        out["source"] = record.source
    if split is not None:
        out["split"] = split
    if features is not None:
        out["features"] = [float(v) for v in features]
    return out


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, record in enumerate(dataset.records):
            row = record_to_dict(
                record,
                split=dataset.splits[i],
                features=None if dataset.features is None else dataset.features[i],
            )
            fh.write(json.dumps(row, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


def load_dataset(path: str | Path, graph: RelationGraph) -> Dataset:
    """Parse and validate a JSON Lines dataset against the relation graph."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            if not isinstance(payload, dict):
                raise ParseError(f"line {lineno}: record must be a JSON object")
            rows.append((lineno, payload))
    return dataset_from_rows(rows, graph)


def dataset_from_rows(rows: list[tuple[int, dict]], graph: RelationGraph) -> Dataset:
    names = {node.name: node for node in graph.nodes}
    records: list[DingRecord] = []
    splits: list[str | None] = []
    features: list[list[float]] | None = None

    for lineno, payload in rows:
        where = f"line {lineno}"
        for key in ("id", "dynasty", "period", "shape"):
            if key not in payload:
                raise SchemaViolationError(f"{where}: missing required field {key!r}")

        def node_of(name, kind, role):
            node = names.get(name)
            if node is None or node.kind is not kind:
                raise SchemaViolationError(f"{where}: unknown {role} {name!r}")
            return node

        dynasty = node_of(payload["dynasty"], Kind.DYNASTY, "dynasty")
        period = node_of(payload["period"], Kind.PERIOD, "period")
        if graph.period_parent(period.index) != dynasty.index:
            raise SchemaViolationError(
                f"{where}: period {period.name!r} does not belong to dynasty "
                f"{dynasty.name!r}"
            )
        shape = node_of(payload["shape"], Kind.SHAPE, "shape")
        chars = tuple(payload.get("characteristics", ()))
        for name in chars:
            node_of(name, Kind.CHARACTERISTIC, "characteristic")
        if len(set(chars)) != len(chars):
            raise SchemaViolationError(f"{where}: duplicate characteristic label")

        bboxes = payload.get("bboxes")
        if bboxes is not None:
            bboxes = tuple(tuple(box) for box in bboxes)
        split = payload.get("split")
        if split is not None and split not in SPLITS:
            raise SchemaViolationError(f"{where}: unknown split tag {split!r}")

        if "features" in payload:
            vec = [float(v) for v in payload["features"]]
            if features is None:
                if records:
                    raise SchemaViolationError(f"{where}: features appear mid-file")
                features = []
            if features and len(vec) != len(features[0]):
                raise SchemaViolationError(f"{where}: feature width changed")
            features.append(vec)
        elif features is not None:
            raise SchemaViolationError(f"{where}: missing features")

        records.append(
            DingRecord(
                id=str(payload["id"]),
                dynasty=dynasty.name,
                period=period.name,
                shape=shape.name,
                characteristics=chars,
                bboxes=bboxes,
                source=payload.get("source"),
            )
        )
        splits.append(split)

    return Dataset(
        records=records,
        schema=graph,
        splits=splits,
        features=None if features is None else np.asarray(features, dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# stratified splitting

def split_dataset(dataset: Dataset, ratios=(4.0, 1.0, 5.0), seed: int = 0) -> Dataset:
    """Stratify by period: largest-remainder apportionment of each period's
    records into train/val/test, shuffled deterministically by `seed`.

    Per period and split, the allocation deviates from the exact ratio share
    by strictly less than one record (remainder ties favour the later split).
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot split an empty dataset")
    fracs = np.asarray(ratios, dtype=np.float64)
    if fracs.shape != (3,) or np.any(fracs <= 0):
        raise BadConfigError("ratios must be three positive numbers")
    fracs = fracs / fracs.sum()

    rng = np.random.default_rng(seed)
    by_period: dict[str, list[int]] = defaultdict(list)
    for i, record in enumerate(dataset.records):
        by_period[record.period].append(i)

    splits: list[str | None] = [None] * len(dataset)
    period_names = [dataset.schema.nodes[i].name for i in dataset.schema.period_indices()]
    for period in period_names:
        indices = by_period.get(period, [])
        if not indices:
            continue
        order = rng.permutation(len(indices))
        shuffled = [indices[j] for j in order]
        counts = _apportion(len(indices), fracs)
        start = 0
        for split, count in zip(SPLITS, counts):
            for i in shuffled[start:start + count]:
                splits[i] = split
            start += count
    return replace(dataset, splits=splits)


def _apportion(count: int, fracs: np.ndarray) -> list[int]:
    exact = fracs * count
    base = np.floor(exact).astype(int)
    leftover = count - int(base.sum())
    order = sorted(range(len(fracs)), key=lambda i: (exact[i] - base[i], i), reverse=True)
    for i in order[:leftover]:
        base[i] += 1
    return [int(c) for c in base]


# ---------------------------------------------------------------------------
# entropy statistics

def dataset_stats(dataset: Dataset, attribute: str) -> DatasetStats:
    """Information gain of an attribute for the fine (period) label.

    For `shape` each record is one observation.  The multilabel
    `characteristic` attribute is counted at the annotation-instance level:
    every (record, characteristic) pair is one observation, and both the
    label entropy and the conditional entropy are taken in that measure so
    the gain stays within its information-theoretic bounds.
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot compute statistics of an empty dataset")
    if attribute == "shape":
        observations = [(r.period, r.shape) for r in dataset.records]
    elif attribute == "characteristic":
        observations = [
            (r.period, c) for r in dataset.records for c in r.characteristics
        ]
    else:
        raise BadConfigError(f"unknown attribute {attribute!r}")

    if not observations:
        entropy = _entropy_bits(Counter(r.period for r in dataset.records).values())
        return DatasetStats(attribute, entropy, entropy, 0.0, len(dataset), 0)

    entropy = _entropy_bits(Counter(p for p, _ in observations).values())
    by_value: dict[str, Counter] = defaultdict(Counter)
    for period, value in observations:
        by_value[value][period] += 1
    total = len(observations)
    conditional = 0.0
    for counter in by_value.values():
        weight = sum(counter.values()) / total
        conditional += weight * _entropy_bits(counter.values())
    return DatasetStats(
        attribute=attribute,
        entropy_bits=entropy,
        conditional_entropy_bits=conditional,
        gain_bits=entropy - conditional,
        n_records=len(dataset),
        n_observations=total,
    )


def _entropy_bits(counts) -> float:
    total = float(sum(counts))
    h = 0.0
    for c in counts:
        if c > 0:
            p = c / total
            h -= p * math.log2(p)
    return h


def uniform_entropy_bits(n_classes: int) -> float:
    """Entropy of a uniform distribution over n classes."""
    if n_classes <= 0:
        raise BadConfigError("n_classes must be positive")
    return math.log2(n_classes)


# ---------------------------------------------------------------------------
# observed-label views used by the losses and the trainer

@dataclass
class LabelArrays:
    dynasty_class: np.ndarray  # [N] dense dynasty index
    period_class: np.ndarray   # [N] dense period index
    shape_class: np.ndarray    # [N] dense shape index
    char_multihot: np.ndarray  # [N, k]


def observed_label_arrays(dataset: Dataset) -> LabelArrays:
    g = dataset.schema
    names = {node.name: node.index for node in g.nodes}
    n_records = len(dataset)
    dynasty = np.zeros(n_records, dtype=np.intp)
    period = np.zeros(n_records, dtype=np.intp)
    shape = np.zeros(n_records, dtype=np.intp)
    chars = np.zeros((n_records, g.k), dtype=np.float64)
    char_base = g.n + g.m
    for i, record in enumerate(dataset.records):
        dynasty[i] = names[record.dynasty]
        period[i] = names[record.period] - g.n_dynasties
        shape[i] = names[record.shape] - g.n
        for c in record.characteristics:
            chars[i, names[c] - char_base] = 1.0
    return LabelArrays(dynasty, period, shape, chars)


def sample_labels(dataset: Dataset) -> list[SampleLabels]:
    """Per-record observed indices in view-local numbering (era view for the
    period node, era-shape view for the shape node, era-characteristic view
    for the characteristic set)."""
    g = dataset.schema
    arrays = observed_label_arrays(dataset)
    out = []
    for i in range(len(dataset)):
        chars = tuple(int(g.n + j) for j in np.flatnonzero(arrays.char_multihot[i]))
        out.append(
            SampleLabels(
                era=int(g.n_dynasties + arrays.period_class[i]),
                era_shape=int(g.n + arrays.shape_class[i]),
                era_characteristics=chars,
            )
        )
    return out


# ---------------------------------------------------------------------------
# synthetic data

@dataclass
class SynthConfig:
    """Desk-scale stand-in for the image corpus.

    Features are sums of seeded random embeddings for the sampled period,
    shape, and characteristics plus white noise, so a linear probe can
    recover the period exactly when noise is zero.  Optional explicit tables
    override the seeded ones: `period_prior` over periods,
    `shape_given_period` rows over shapes, `char_given_period` activation
    probabilities.
    """

    n_dynasties: int = 3
    n_periods: int = 11
    n_shapes: int = 8
    n_characteristics: int = 16
    samples: int = 1000
    feature_dim: int = 64
    noise: float = 0.5
    imbalance: float = 0.0
    dynasty_scale: float = 0.0
    phase_scale: float = 0.0  # shared early/mid/late embedding within each dynasty
    era_scale: float = 1.0
    shape_scale: float = 1.0
    char_scale: float = 1.0
    adjacent_corr: float = 0.0  # correlation of timeline-adjacent period embeddings
    extra_parent_rate: float = 0.25
    period_prior: list[float] | None = None
    shape_given_period: list[list[float]] | None = None
    char_given_period: list[list[float]] | None = None
    split_ratios: tuple[float, float, float] = (4.0, 1.0, 5.0)
    tag_splits: bool = True
    seed: int = 0

    def __post_init__(self):
        if min(self.n_dynasties, self.n_periods, self.n_shapes) < 1:
            raise BadConfigError("need at least one dynasty, period, and shape")
        if self.n_characteristics < 0:
            raise BadConfigError("characteristic count cannot be negative")
        if self.samples < 1 or self.feature_dim < 1:
            raise BadConfigError("samples and feature_dim must be positive")
        if self.noise < 0:
            raise BadConfigError("noise must be >= 0")
        if not 0.0 <= self.extra_parent_rate <= 1.0:
            raise BadConfigError("extra_parent_rate must be in [0, 1]")
        if not 0.0 <= self.adjacent_corr < 1.0:
            raise BadConfigError("adjacent_corr must be in [0, 1)")
        self.split_ratios = tuple(float(r) for r in self.split_ratios)


def synth_schema(config: SynthConfig, rng: np.random.Generator) -> dict:
    """Random-but-valid schema: periods in contiguous dynasty blocks; every
    period has at least one shape (and characteristic) child and every
    attribute at least one parent period."""
    nd, np_, m, k = (
        config.n_dynasties,
        config.n_periods,
        config.n_shapes,
        config.n_characteristics,
    )
    dynasties = [f"dynasty{i}" for i in range(nd)]
    periods = []
    for j in range(np_):
        parent = dynasties[min(j * nd // np_, nd - 1)]
        periods.append({"name": f"period{j}", "parent": parent})

    def attribute_entries(prefix: str, count: int) -> list[dict]:
        entries = []
        for a in range(count):
            parents = {a % np_} | {p for p in range(np_) if p % count == a}
            extras = np.flatnonzero(rng.random(np_) < config.extra_parent_rate)
            parents |= set(int(p) for p in extras)
            entries.append(
                {
                    "name": f"{prefix}{a}",
                    "parent_periods": [f"period{p}" for p in sorted(parents)],
                }
            )
        return entries

    return {
        "dynasties": dynasties,
        "periods": periods,
        "shapes": attribute_entries("shape", m),
        "characteristics": attribute_entries("char", k) if k else [],
    }


def _period_prior(config: SynthConfig) -> np.ndarray:
    if config.period_prior is not None:
        prior = np.asarray(config.period_prior, dtype=np.float64)
        if prior.shape != (config.n_periods,) or np.any(prior < 0):
            raise BadConfigError("period_prior must be non-negative over all periods")
        if abs(prior.sum() - 1.0) > 1e-9:
            raise BadConfigError("period_prior must sum to 1")
        return prior
    weights = np.exp(-config.imbalance * np.arange(config.n_periods))
    return weights / weights.sum()


def _attribute_tables(config: SynthConfig, graph: RelationGraph,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    struct_shape = graph.view(Scope.ERA_SHAPE).structure()
    struct_char = graph.view(Scope.ERA_CHARACTERISTIC).structure()
    shape_support = struct_shape.attr_parents  # [periods, shapes]
    char_support = struct_char.attr_parents    # [periods, chars]

    if config.shape_given_period is not None:
        shape_table = np.asarray(config.shape_given_period, dtype=np.float64)
        if shape_table.shape != shape_support.shape:
            raise BadConfigError("shape_given_period has the wrong shape")
        if np.any(shape_table < 0) or np.any((shape_table > 0) & (shape_support == 0)):
            raise BadConfigError("shape_given_period puts mass on non-child shapes")
        if np.any(np.abs(shape_table.sum(axis=1) - 1.0) > 1e-9):
            raise BadConfigError("shape_given_period rows must sum to 1")
    else:
        raw = rng.uniform(0.2, 1.0, size=shape_support.shape) * shape_support
        shape_table = raw / raw.sum(axis=1, keepdims=True)

    if config.n_characteristics == 0:
        char_table = np.zeros((config.n_periods, 0))
    elif config.char_given_period is not None:
        char_table = np.asarray(config.char_given_period, dtype=np.float64)
        if char_table.shape != char_support.shape:
            raise BadConfigError("char_given_period has the wrong shape")
        if np.any(char_table < 0) or np.any(char_table > 1):
            raise BadConfigError("char_given_period entries must lie in [0, 1]")
        if np.any((char_table > 0) & (char_support == 0)):
            raise BadConfigError("char_given_period puts mass on non-child characteristics")
    else:
        char_table = rng.uniform(0.25, 0.9, size=char_support.shape) * char_support
    return shape_table, char_table


def synth_generate(config: SynthConfig) -> tuple[Dataset, np.ndarray]:
    """Generate a tagged synthetic dataset and its feature matrix."""
    rng = np.random.default_rng(config.seed)
    graph = graph_from_spec(synth_schema(config, rng))
    prior = _period_prior(config)
    shape_table, char_table = _attribute_tables(config, graph, rng)

    f = config.feature_dim
    scale = 1.0 / np.sqrt(f)
    emb_dynasty = rng.normal(0.0, 1.0, (config.n_dynasties, f)) * scale
    emb_period = rng.normal(0.0, 1.0, (config.n_periods, f)) * scale
    if config.adjacent_corr > 0:
        # AR(1) chain over the timeline: adjacent periods share most of their
        # appearance, mirroring how neighbouring eras are hard to tell apart
        rho = config.adjacent_corr
        for j in range(1, config.n_periods):
            emb_period[j] = rho * emb_period[j - 1] + np.sqrt(1 - rho * rho) * emb_period[j]
    emb_shape = rng.normal(0.0, 1.0, (config.n_shapes, f)) * scale
    emb_char = rng.normal(0.0, 1.0, (max(config.n_characteristics, 1), f)) * scale

    period_names = [graph.nodes[i].name for i in graph.period_indices()]
    shape_names = [graph.nodes[i].name for i in graph.shape_indices()]
    char_names = [graph.nodes[i].name for i in graph.characteristic_indices()]
    parent_index = [graph.period_parent(i) for i in graph.period_indices()]
    # within-dynasty rank (early/mid/late); the phase embedding is shared
    # across dynasties, so a period is the composition (dynasty, phase)
    seen: dict[int, int] = {}
    phase_index = []
    for parent in parent_index:
        phase_index.append(seen.get(parent, 0))
        seen[parent] = seen.get(parent, 0) + 1
    emb_phase = rng.normal(0.0, 1.0, (max(phase_index) + 1, f)) * scale
    period_parent = {
        graph.nodes[i].name: graph.nodes[graph.period_parent(i)].name
        for i in graph.period_indices()
    }

    records: list[DingRecord] = []
    features = np.empty((config.samples, f), dtype=np.float64)
    for i in range(config.samples):
        p = int(rng.choice(config.n_periods, p=prior))
        s = int(rng.choice(config.n_shapes, p=shape_table[p]))
        draws = rng.random(config.n_characteristics) if config.n_characteristics else np.empty(0)
        chars = np.flatnonzero(draws < char_table[p]) if config.n_characteristics else []
        vec = (
            config.dynasty_scale * emb_dynasty[parent_index[p]]
            + config.phase_scale * emb_phase[phase_index[p]]
            + config.era_scale * emb_period[p]
            + config.shape_scale * emb_shape[s]
        )
        if len(chars):
            vec = vec + config.char_scale * emb_char[chars].mean(axis=0)
        if config.noise > 0:
            vec = vec + config.noise * rng.normal(0.0, 1.0, f) * scale
        features[i] = vec
        records.append(
            DingRecord(
                id=f"synth-{i:06d}",
                dynasty=period_parent[period_names[p]],
                period=period_names[p],
                shape=shape_names[s],
                characteristics=tuple(char_names[c] for c in chars),
            )
        )

    dataset = Dataset(records=records, schema=graph, features=features)
    if config.tag_splits:
        dataset = split_dataset(dataset, config.split_ratios, seed=config.seed)
    return dataset, features


def synth_config_from_dict(payload: dict) -> SynthConfig:
    try:
        return SynthConfig(**payload)
    except TypeError as exc:
        raise BadConfigError(str(exc)) from None
