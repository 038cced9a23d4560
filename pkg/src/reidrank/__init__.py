"""Embedding retrieval toolkit.

Rank gallery embeddings against probes, re-rank with k-reciprocal
neighborhoods and Jaccard blending, evaluate with CMC and mAP, merge identity
label spaces across datasets, and verify the hierarchical cross-merge core at
small scale. Estimators follow the scikit-learn fit/transform/predict
conventions so they compose with that ecosystem.
"""

__version__ = "0.1.0"

from .exceptions import (
    DimensionMismatchError,
    DuplicateTagError,
    FormatError,
    InvalidSetError,
    KOutOfRangeError,
    MissingGroundTruthError,
    UnknownLabelError,
)
from .metrics import (
    EvalReport,
    GroundTruth,
    average_precision,
    build_ground_truth,
    cmc_curve,
    evaluate_rank_lists,
    mean_ap,
    rank_k_accuracy,
)
from .neighbors import (
    KReciprocalReranker,
    NeighborSets,
    RankList,
    RerankParams,
    RerankResult,
    blended_distance,
    expand_sets,
    half_k,
    jaccard_distance,
    joint_distance_matrix,
    knn_sets,
    neighbor_sets,
    rank_initial,
    reciprocal_sets,
    rerank,
    rerank_probe,
)
from .pairwise import (
    MetricConfig,
    NearestGalleryClassifier,
    euclidean_distance,
    identify,
    mahalanobis_quadratic,
    pairwise_matrix,
    psd_check,
)
from .pyramid import (
    HcnOutputs,
    MergeWeights,
    StagePyramid,
    channel_project,
    cross_merge,
    dropout,
    gradient_check,
    hcn_forward,
    head_logits,
    id_loss,
    stub_backbone,
    upsample4x,
)
from .relabel import (
    CombinedManifest,
    DatasetManifest,
    LabelSpaceMerger,
    apply_mapping,
    merge_manifests,
)
from .store import (
    EmbeddingRecord,
    EmbeddingSet,
    Violation,
    read_metric_matrix,
    read_metric_matrix_file,
    read_set,
    read_set_file,
    validate_set,
    write_metric_matrix,
    write_metric_matrix_file,
    write_set,
    write_set_file,
)

__all__ = [
    "__version__",
    # store
    "EmbeddingRecord",
    "EmbeddingSet",
    "Violation",
    "read_set",
    "read_set_file",
    "write_set",
    "write_set_file",
    "validate_set",
    "read_metric_matrix",
    "read_metric_matrix_file",
    "write_metric_matrix",
    "write_metric_matrix_file",
    # pairwise
    "MetricConfig",
    "NearestGalleryClassifier",
    "euclidean_distance",
    "mahalanobis_quadratic",
    "pairwise_matrix",
    "psd_check",
    "identify",
    # neighbors
    "KReciprocalReranker",
    "NeighborSets",
    "RankList",
    "RerankParams",
    "RerankResult",
    "blended_distance",
    "expand_sets",
    "half_k",
    "jaccard_distance",
    "joint_distance_matrix",
    "knn_sets",
    "neighbor_sets",
    "rank_initial",
    "reciprocal_sets",
    "rerank",
    "rerank_probe",
    # metrics
    "EvalReport",
    "GroundTruth",
    "average_precision",
    "build_ground_truth",
    "cmc_curve",
    "evaluate_rank_lists",
    "mean_ap",
    "rank_k_accuracy",
    # relabel
    "CombinedManifest",
    "DatasetManifest",
    "LabelSpaceMerger",
    "apply_mapping",
    "merge_manifests",
    # pyramid
    "HcnOutputs",
    "MergeWeights",
    "StagePyramid",
    "channel_project",
    "cross_merge",
    "dropout",
    "gradient_check",
    "hcn_forward",
    "head_logits",
    "id_loss",
    "stub_backbone",
    "upsample4x",
    # exceptions
    "FormatError",
    "InvalidSetError",
    "DimensionMismatchError",
    "KOutOfRangeError",
    "MissingGroundTruthError",
    "DuplicateTagError",
    "UnknownLabelError",
]
