"""Facial-image privacy protection and retrieval-metric evaluation toolkit.

Protect: move a generated or cloaked image's recognition embeddings toward
a distant target identity while staying perceptually close to the original.
Evaluate: exact recall@k and the dataset-relative percentage metric in both
query directions, plus black-box transfer aggregation across embedding
backends that were not optimized against.
"""

from .backends import (
    EmbeddingBackend,
    GeneratorBackend,
    IdentityEmbedding,
    LinearGenerator,
    MeanSquaredDistance,
    PerceptualDistance,
    RandomProjectionEmbedding,
    SumSquaredDistance,
)
from .errors import (
    ConfigError,
    ContractViolation,
    EvaluationError,
    NumericError,
    PrivkitError,
    RegistrationError,
    SelectionError,
)
from .loss import LossParts, gradient_check, privacy_loss, privacy_loss_grad
from .metrics import (
    EvalContexts,
    Gallery,
    MetricReport,
    between,
    build_contexts,
    compute_metric_report,
    merge_galleries,
    nearest_neighbors,
    percentage_metric,
    percentage_metric_detail,
    recall_at_k,
)
from .optimize import (
    Adam,
    Method,
    ProtectionJob,
    ProtectionResult,
    compose_protect,
    pixel_cloak_protect,
    privacygan_protect,
    protect,
)
from .registry import BackendRegistry
from .targets import TargetPair, select_target, select_targets_batch
from .transfer import (
    BudgetMatch,
    TransferPlan,
    TransferReport,
    match_privacy_budget,
    run_transfer_eval,
)
from .types import (
    EmbeddingVector,
    Hyperparameters,
    HYPERPARAMETER_PRESETS,
    ImageRecord,
    Role,
    embedding_distance,
    hyperparameter_preset,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "BackendRegistry",
    "BudgetMatch",
    "ConfigError",
    "ContractViolation",
    "EmbeddingBackend",
    "EmbeddingVector",
    "EvalContexts",
    "EvaluationError",
    "Gallery",
    "GeneratorBackend",
    "HYPERPARAMETER_PRESETS",
    "Hyperparameters",
    "IdentityEmbedding",
    "ImageRecord",
    "LinearGenerator",
    "LossParts",
    "MeanSquaredDistance",
    "Method",
    "MetricReport",
    "NumericError",
    "PerceptualDistance",
    "PrivkitError",
    "ProtectionJob",
    "ProtectionResult",
    "RandomProjectionEmbedding",
    "RegistrationError",
    "Role",
    "SelectionError",
    "SumSquaredDistance",
    "TargetPair",
    "TransferPlan",
    "TransferReport",
    "between",
    "build_contexts",
    "compose_protect",
    "compute_metric_report",
    "embedding_distance",
    "gradient_check",
    "hyperparameter_preset",
    "match_privacy_budget",
    "merge_galleries",
    "nearest_neighbors",
    "percentage_metric",
    "percentage_metric_detail",
    "pixel_cloak_protect",
    "privacy_loss",
    "privacy_loss_grad",
    "privacygan_protect",
    "protect",
    "recall_at_k",
    "run_transfer_eval",
    "select_target",
    "select_targets_batch",
]
