"""OCT-A vessel segmentation and inter-capillary area quantification."""

from ._octaquant import (
    ComputeError,
    ConfigError,
    FormatError,
    IoError,
    Model,
    ShapeError,
    accuracy,
    analyze,
    confusion,
    dice,
    distance_transform,
    generate_phantom,
    otsu,
    otsu_threshold,
    remove_small_components,
    run_cli,
    train,
)

__all__ = [
    "ComputeError",
    "ConfigError",
    "FormatError",
    "IoError",
    "Model",
    "ShapeError",
    "accuracy",
    "analyze",
    "confusion",
    "dice",
    "distance_transform",
    "generate_phantom",
    "otsu",
    "otsu_threshold",
    "remove_small_components",
    "run_cli",
    "train",
]
