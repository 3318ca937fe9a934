"""kcm: confidence-gated collaboration between small spline-network models
and large model backends, with KL distillation and long-tail evaluation."""

from .backends import (BackendError, BackendHTTPError, BackendMalformedResponse,
                       BackendTimeout, CountingBackend, HttpBackend,
                       HttpBackendConfig, LargeModelResponse, OracleBackend,
                       OracleSpec, oracle_predict)
from .classifiers import (ArchSpec, ClassifierHandle, ModelKind, clone_model,
                          load_handle, save_handle, softmax, train_supervised)
from .collab import (ConfidenceScore, ConfidenceSource, DecisionLog, DecisionRecord,
                     DistillationConfig, KlDirection, PromptAugmentation,
                     RouteTarget, RoutingDecision, SecondGate, TrainingPartition,
                     build_prompt, confidence, infer, kl_loss, partition_training,
                     rank_classes, route, train_kcm)
from .data import (CsvSchema, DataError, Dataset, LongTailSpec, Region, Sample,
                   Split, class_counts, generate_longtail, load_csv,
                   partition_regions, save_dataset)
from .evaluation import (AblationResult, EvalReport, ForgettingReport,
                         default_phase_intervals, evaluate_cascade,
                         forgetting_score, run_ablation, run_forgetting_benchmark)
from .kan import (CapacityMatchError, KanEdge, KanLayer, KanNetwork, MlpNetwork,
                  NumericalError, edge_forward, match_capacity, silu)
from .serialize import ModelFormatError, load_network, save_network
from .splines import SplineBasis

__version__ = "0.1.0"

__all__ = [
    "ArchSpec", "AblationResult", "BackendError", "BackendHTTPError",
    "BackendMalformedResponse", "BackendTimeout", "CapacityMatchError",
    "ClassifierHandle", "ConfidenceScore", "ConfidenceSource", "CountingBackend",
    "CsvSchema", "DataError", "Dataset", "DecisionLog", "DecisionRecord",
    "DistillationConfig", "EvalReport", "ForgettingReport", "HttpBackend",
    "HttpBackendConfig", "KanEdge", "KanLayer", "KanNetwork", "KlDirection",
    "LargeModelResponse", "LongTailSpec", "MlpNetwork", "ModelFormatError",
    "ModelKind", "NumericalError", "OracleBackend", "OracleSpec",
    "PromptAugmentation", "Region", "RouteTarget", "RoutingDecision", "Sample",
    "SecondGate", "SplineBasis", "Split", "TrainingPartition", "build_prompt",
    "class_counts", "clone_model", "confidence", "default_phase_intervals",
    "edge_forward", "evaluate_cascade", "forgetting_score", "generate_longtail",
    "infer", "kl_loss", "load_csv", "load_handle", "load_network",
    "match_capacity", "oracle_predict", "partition_regions", "partition_training",
    "rank_classes", "route", "run_ablation", "run_forgetting_benchmark",
    "save_dataset", "save_handle", "save_network", "silu", "softmax",
    "train_kcm", "train_supervised",
]
