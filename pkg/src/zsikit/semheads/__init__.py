"""Semantic detection, mask and proposal heads with analytic gradients."""
from .checkpoint import load_checkpoint, save_checkpoint
from .embeddings import (
    BACKGROUND_TOKEN,
    DEFAULT_DIM,
    EmbeddingError,
    WordVectorTable,
    load_embeddings,
    sync_background,
)
from .gradcheck import BlockCheck, ProblemSizes, gradient_check, random_problem
from .heads import (
    BaRpnParams,
    DetectorHeadParams,
    MaskHeadParams,
    ShapeError,
    ZsiParams,
    ba_rpn_forward,
    detector_forward,
    init_params,
    mask_head_forward,
    merge_scores,
    softmax,
)
from .losses import (
    FeatureBatch,
    Gradients,
    LabelError,
    LossConfig,
    backward,
    loss_and_grad,
    reconstruction_loss,
    zsi_loss,
)
from .train import DivergenceError, TrainConfig, TrainResult, train_loop

__all__ = [
    "BACKGROUND_TOKEN",
    "DEFAULT_DIM",
    "BaRpnParams",
    "BlockCheck",
    "DetectorHeadParams",
    "DivergenceError",
    "EmbeddingError",
    "FeatureBatch",
    "Gradients",
    "LabelError",
    "LossConfig",
    "MaskHeadParams",
    "ProblemSizes",
    "ShapeError",
    "TrainConfig",
    "TrainResult",
    "WordVectorTable",
    "ZsiParams",
    "ba_rpn_forward",
    "backward",
    "detector_forward",
    "gradient_check",
    "init_params",
    "load_checkpoint",
    "load_embeddings",
    "loss_and_grad",
    "mask_head_forward",
    "merge_scores",
    "random_problem",
    "reconstruction_loss",
    "save_checkpoint",
    "softmax",
    "sync_background",
    "train_loop",
    "zsi_loss",
]
