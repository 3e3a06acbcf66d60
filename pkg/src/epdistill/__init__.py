"""epdistill: compact-descriptor distillation math and keypoint tooling.

Core pieces: unit-norm descriptor sets with Gram/cosine structure and MNN
matching; Gram-preserving teacher compression and orthogonal-Procrustes
alignment losses with analytic gradients; the patchwise softmax detection
loss in direct and two-convolution forms; keypoint NMS, flip-merge caching,
extraction and bilinear sampling; a toy gradient-descent distillation
harness; and a static architecture calculator.  Scikit-learn style wrappers
live in :mod:`epdistill.estimators`, file formats in :mod:`epdistill.fileio`,
and the ``epdistill`` CLI in :mod:`epdistill.cli`.
"""

from . import archcalc, errors, estimators, fileio
from .descriptors import (
    DescriptorSet,
    MatchList,
    gram,
    gram_gap,
    l2_normalize_rows,
    mnn_match,
)
from .detection import (
    BinaryHeatmap,
    KeypointList,
    Raster,
    bilinear_sample,
    extract_keypoints,
    merge_flip_cache,
    nms,
    unfold_softmax_fast,
    unfold_softmax_grad,
    unfold_softmax_naive,
    unfold_softmax_patch_losses,
)
from .distill import (
    CompressedTeacher,
    LossWeights,
    OrthogonalMap,
    lra_compress,
    op_loss,
    op_loss_grad,
    pca_compress,
    procrustes_solve,
    sim_loss,
    sim_loss_grad,
    total_loss,
)
from .harness import (
    DISCARD,
    DistillConfig,
    StepRecord,
    ToyStudent,
    TrainReport,
    gen_teacher_batch,
    gen_views,
    select_top_covisible,
    student_backward,
    student_forward,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "archcalc",
    "errors",
    "estimators",
    "fileio",
    "DescriptorSet",
    "MatchList",
    "gram",
    "gram_gap",
    "l2_normalize_rows",
    "mnn_match",
    "BinaryHeatmap",
    "KeypointList",
    "Raster",
    "bilinear_sample",
    "extract_keypoints",
    "merge_flip_cache",
    "nms",
    "unfold_softmax_fast",
    "unfold_softmax_grad",
    "unfold_softmax_naive",
    "unfold_softmax_patch_losses",
    "CompressedTeacher",
    "LossWeights",
    "OrthogonalMap",
    "lra_compress",
    "op_loss",
    "op_loss_grad",
    "pca_compress",
    "procrustes_solve",
    "sim_loss",
    "sim_loss_grad",
    "total_loss",
    "DISCARD",
    "DistillConfig",
    "StepRecord",
    "ToyStudent",
    "TrainReport",
    "gen_teacher_batch",
    "gen_views",
    "select_top_covisible",
    "student_backward",
    "student_forward",
    "train",
]
