"""Decoupled appearance modeling: per-view embeddings, the upsampling CNN and its loss."""

from .losses import LossConfig, d_ssim, l1, loss_decoupled, loss_plain, ssim, ssim_grad
from .network import (
    EMBEDDING_DIM,
    OUT_CHANNELS,
    CnnParams,
    TransformMode,
    apply_transform,
    apply_transform_backward,
    cnn_forward,
    cnn_gradients,
    concat_embedding,
    downsample,
    init_params,
    predict_map,
)
from .training import (
    Adam,
    AppearanceResult,
    load_checkpoint,
    moving_average,
    save_checkpoint,
    train_appearance,
    write_trace_csv,
)

__all__ = [
    "EMBEDDING_DIM", "OUT_CHANNELS", "CnnParams", "TransformMode", "LossConfig", "Adam", "AppearanceResult",
    "apply_transform", "apply_transform_backward", "cnn_forward", "cnn_gradients", "concat_embedding",
    "downsample", "init_params", "predict_map", "l1", "ssim", "ssim_grad", "d_ssim", "loss_decoupled",
    "loss_plain", "train_appearance", "moving_average", "save_checkpoint", "load_checkpoint", "write_trace_csv",
]
