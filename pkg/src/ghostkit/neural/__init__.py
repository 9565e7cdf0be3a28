"""From-scratch residual-denoising convolutional network."""

from .layers import (
    batch_norm,
    batch_norm_backward,
    conv2d,
    conv2d_backward,
    relu,
    relu_backward,
)
from .network import (
    DESK_SCALE_SPEC,
    NetworkParams,
    NetworkSpec,
    TrainingPair,
    denoise,
    forward_residual,
    forward_residual_batch,
    init_network,
    load_checkpoint,
    loss_gi,
    save_checkpoint,
    zero_params,
)
from .training import (
    AUGMENTATION_MODES,
    CHECKPOINT_EPOCH_GRID,
    TrainConfig,
    TrainResult,
    export_loss_curve,
    gaussian_denoiser_baseline,
    gaussian_pairs,
    hflip_pair,
    random_augment,
    rotate_pair,
    train,
)

__all__ = [
    "AUGMENTATION_MODES",
    "CHECKPOINT_EPOCH_GRID",
    "DESK_SCALE_SPEC",
    "NetworkParams",
    "NetworkSpec",
    "TrainConfig",
    "TrainResult",
    "TrainingPair",
    "batch_norm",
    "batch_norm_backward",
    "conv2d",
    "conv2d_backward",
    "denoise",
    "export_loss_curve",
    "forward_residual",
    "forward_residual_batch",
    "gaussian_denoiser_baseline",
    "gaussian_pairs",
    "hflip_pair",
    "init_network",
    "load_checkpoint",
    "loss_gi",
    "random_augment",
    "relu",
    "relu_backward",
    "rotate_pair",
    "save_checkpoint",
    "train",
    "zero_params",
]
