"""Implicit neural representation reconstruction: multiresolution hash
encoding feeding a small ReLU network with sigmoid output, trained
self-supervised against measured RF data through the acoustic forward
operator."""

from .encoding import HashEncoding, HashEncodingConfig
from .network import Adam, InrModel, Mlp, MlpConfig, load_model, new_model, save_model
from .training import (
    BatchSampler,
    EpochStats,
    InrTrainConfig,
    TrainingBatch,
    full_loss,
    inr_train,
    loss_and_grads,
    lr_at_epoch,
    predicted_signal,
    render_image,
    sample_training_batch,
)

__all__ = [
    "HashEncoding",
    "HashEncodingConfig",
    "Mlp",
    "MlpConfig",
    "InrModel",
    "Adam",
    "new_model",
    "save_model",
    "load_model",
    "InrTrainConfig",
    "TrainingBatch",
    "BatchSampler",
    "EpochStats",
    "sample_training_batch",
    "predicted_signal",
    "inr_train",
    "render_image",
    "full_loss",
    "loss_and_grads",
    "lr_at_epoch",
]
