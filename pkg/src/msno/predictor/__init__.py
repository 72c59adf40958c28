from .ffno import FFNO, FfnoConfig, spectral_parameter_count
from .training import (
    DESK_CONFIGS,
    FULL_SCALE_CONFIGS,
    PredictorCheckpoint,
    TrainOptions,
    TypeModel,
    collect_patches,
    predict_basis,
    train,
    train_type_model,
)

__all__ = [
    "FFNO",
    "FfnoConfig",
    "spectral_parameter_count",
    "DESK_CONFIGS",
    "FULL_SCALE_CONFIGS",
    "PredictorCheckpoint",
    "TrainOptions",
    "TypeModel",
    "collect_patches",
    "predict_basis",
    "train",
    "train_type_model",
]
