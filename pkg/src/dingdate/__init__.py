"""Multi-granularity dating of bronze dings over a knowledge-guided relation graph."""

__version__ = "0.1.0"

from .graph import (  # noqa: F401
    GraphView,
    Kind,
    NodeId,
    RelationGraph,
    Scope,
    build_graph,
    bronze_era_schema,
    enumerate_legal,
    graph_from_spec,
    graph_to_spec,
    is_legal,
    load_graph,
    save_graph,
)
from .inference import (  # noqa: F401
    InferenceResult,
    NodeActivations,
    infer,
    joint_probability,
    marginal,
    oracle_inference,
    partition_function,
)
from .losses import Hyperparams, SampleLabels  # noqa: F401
from .model import (  # noqa: F401
    HeadOutputs,
    ModelConfig,
    ModelVariant,
    forward,
    init_model,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .data import (  # noqa: F401
    Dataset,
    DatasetStats,
    DingRecord,
    SynthConfig,
    dataset_stats,
    load_dataset,
    save_dataset,
    split_dataset,
    synth_generate,
)
from .train import (  # noqa: F401
    Metrics,
    TrainConfig,
    TrainResult,
    evaluate,
    gradient_check_report,
)
from . import train  # noqa: F401  (keep the submodule binding; the train()
                     # entry point lives at dingdate.train.train)
