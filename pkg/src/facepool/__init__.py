"""Template face recognition with pooled face images.

A template (a set of stills and video frames of one person) is routed into
pose x quality bins; each bin collapses to one averaged image, so a template
of any size matches in near constant time. Pose comes from 68-point
landmarks and a generic 3D head model, quality from block entropies, and
templates compare through softmax-fused correlations of per-bin features.
"""

from ._kernels import BACKEND as kernel_backend
from .core import (
    ALL_BIN_KEYS,
    BinKey,
    FaceMedia,
    FacepoolError,
    FeatureVector,
    PooledEntry,
    PooledTemplate,
    Template,
)
from .embedding import (
    ExternalExtractor,
    PixelExtractor,
    embed_pooled,
    extract,
    ncc,
    pool_features,
    read_feature_store,
    write_feature_store,
)
from .evaluation import (
    CmcCurve,
    EvalReport,
    RocCurve,
    build_report,
    cmc,
    fpr_at_tpr,
    nauc,
    roc,
    template_size_stats,
    tpr_at_fpr,
    write_report,
)
from .ingestion import (
    Manifest,
    PipelineConfig,
    Protocol,
    RunLog,
    load_manifest,
    load_protocol,
    run_pipeline,
    save_manifest,
    save_protocol,
)
from .matching import (
    DEFAULT_BETAS,
    PairScoreMatrix,
    pair_scores,
    softmax_fuse,
    template_similarity,
)
from .pooling import (
    PoolMode,
    PreparedMedia,
    assign_bin,
    bin_template,
    pool_bin,
    pool_template,
)
from .pose import (
    AlignedFace,
    CameraModel,
    HeadPose,
    Model3D,
    bundled_model,
    canonical_align,
    compose_rotation,
    decompose_rotation,
    default_camera,
    quantize_yaw,
    roll_compensate,
    solve_pnp,
)
from .quality import (
    QualityFeatures,
    QualityScore,
    quality_score,
    quantize_quality,
    sseq_features,
)
from .synth import synth_benchmark

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "kernel_backend",
    # core
    "ALL_BIN_KEYS",
    "BinKey",
    "FaceMedia",
    "FacepoolError",
    "FeatureVector",
    "PooledEntry",
    "PooledTemplate",
    "Template",
    # pose
    "AlignedFace",
    "CameraModel",
    "HeadPose",
    "Model3D",
    "bundled_model",
    "canonical_align",
    "compose_rotation",
    "decompose_rotation",
    "default_camera",
    "quantize_yaw",
    "roll_compensate",
    "solve_pnp",
    # quality
    "QualityFeatures",
    "QualityScore",
    "quality_score",
    "quantize_quality",
    "sseq_features",
    # pooling
    "PoolMode",
    "PreparedMedia",
    "assign_bin",
    "bin_template",
    "pool_bin",
    "pool_template",
    # embedding
    "ExternalExtractor",
    "PixelExtractor",
    "embed_pooled",
    "extract",
    "ncc",
    "pool_features",
    "read_feature_store",
    "write_feature_store",
    # matching
    "DEFAULT_BETAS",
    "PairScoreMatrix",
    "pair_scores",
    "softmax_fuse",
    "template_similarity",
    # evaluation
    "CmcCurve",
    "EvalReport",
    "RocCurve",
    "build_report",
    "cmc",
    "fpr_at_tpr",
    "nauc",
    "roc",
    "template_size_stats",
    "tpr_at_fpr",
    "write_report",
    # ingestion
    "Manifest",
    "PipelineConfig",
    "Protocol",
    "RunLog",
    "load_manifest",
    "load_protocol",
    "run_pipeline",
    "save_manifest",
    "save_protocol",
    # synth
    "synth_benchmark",
]
