"""unifex: margin-loss linear probing and retrieval evaluation for
precomputed image embeddings.

The toolkit trains a small projection head (dropout + linear map to 64
dims) over frozen backbone embeddings with a family of margin-based
metric-learning losses, curates training manifests, and scores
instance-level retrieval with mMP@5 / mAP@5.
"""

from .curation import (
    CurationConfig,
    cap_samples_per_class,
    curate,
    filter_min_samples,
    remap_class_ids,
    subsample_classes,
)
from .data import (
    ClassStats,
    DatasetManifest,
    EmbeddingMatrix,
    ManifestRecord,
    l2_normalize_rows,
    load_embeddings,
    load_manifest,
    save_embeddings,
    save_manifest,
)
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    IoError,
    NumericError,
    ShapeError,
    UnifexError,
)
from .losses import (
    ClassifierWeights,
    LossConfig,
    LossState,
    adacos_update_scale,
    adaface_transform,
    arcface_transform,
    cosine_logits,
    cross_entropy_from_logits,
    curricular_transform,
    dynamic_margin,
    init_classifier,
    init_loss_state,
    li_arcface_transform,
    loss_and_grad,
    loss_value,
    margins_from_counts,
)
from .optim import (
    AdamState,
    EpochStats,
    TrainerConfig,
    adam_step,
    count_trainable_params,
    lr_at,
    train_probe,
)
from .probe import (
    ProbeModel,
    init_probe_model,
    load_checkpoint,
    probe_backward,
    project,
    save_checkpoint,
    zero_shot_project,
)
from .retrieval import EvalResult, evaluate, map_at_k, mmp_at_k, top_k

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "ClassStats",
    "ClassifierWeights",
    "ConfigError",
    "CurationConfig",
    "DataError",
    "DatasetManifest",
    "EmbeddingMatrix",
    "EpochStats",
    "EvalResult",
    "FormatError",
    "IoError",
    "LossConfig",
    "LossState",
    "ManifestRecord",
    "NumericError",
    "ProbeModel",
    "ShapeError",
    "TrainerConfig",
    "UnifexError",
    "adacos_update_scale",
    "adaface_transform",
    "adam_step",
    "arcface_transform",
    "cap_samples_per_class",
    "cosine_logits",
    "count_trainable_params",
    "cross_entropy_from_logits",
    "curate",
    "curricular_transform",
    "dynamic_margin",
    "evaluate",
    "filter_min_samples",
    "init_classifier",
    "init_loss_state",
    "init_probe_model",
    "l2_normalize_rows",
    "li_arcface_transform",
    "load_checkpoint",
    "load_embeddings",
    "load_manifest",
    "loss_and_grad",
    "loss_value",
    "lr_at",
    "map_at_k",
    "margins_from_counts",
    "mmp_at_k",
    "probe_backward",
    "project",
    "remap_class_ids",
    "save_checkpoint",
    "save_embeddings",
    "save_manifest",
    "subsample_classes",
    "top_k",
    "train_probe",
    "zero_shot_project",
]
