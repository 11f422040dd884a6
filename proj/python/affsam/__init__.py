"""Affordance-map toolkit bindings."""

from ._affsam import (
    ConfigError,
    DimensionError,
    InputError,
    IoError,
    NumericError,
    Predictor,
    ValidationError,
    __version__,
    build_prompt,
    clip_gradients,
    evaluate_split,
    generate_synthetic_dataset,
    init_checkpoint,
    kld,
    lr_at,
    nss,
    postprocess,
    read_map,
    sim,
    tokenize,
    verify,
    write_map,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "InputError",
    "IoError",
    "NumericError",
    "Predictor",
    "ValidationError",
    "__version__",
    "build_prompt",
    "clip_gradients",
    "evaluate_split",
    "generate_synthetic_dataset",
    "init_checkpoint",
    "kld",
    "lr_at",
    "nss",
    "postprocess",
    "read_map",
    "sim",
    "tokenize",
    "verify",
    "write_map",
]
