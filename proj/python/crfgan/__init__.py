"""CRF-guided memory-efficient 3-D GAN toolkit."""

from ._core import (
    CapacityError,
    FeatureSet,
    FormatError,
    GeometryError,
    IntegrityError,
    Model,
    NumericError,
    ParameterError,
    TrainConfig,
    estimate_memory,
    extract_features,
    fid,
    init_model,
    load_model,
    load_volume,
    make_phantom,
    mmd,
    param_report,
    save_volume,
    train,
)

__all__ = [
    "CapacityError",
    "FeatureSet",
    "FormatError",
    "GeometryError",
    "IntegrityError",
    "Model",
    "NumericError",
    "ParameterError",
    "TrainConfig",
    "estimate_memory",
    "extract_features",
    "fid",
    "init_model",
    "load_model",
    "load_volume",
    "make_phantom",
    "mmd",
    "param_report",
    "save_volume",
    "train",
]
