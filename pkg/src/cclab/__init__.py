"""Counting laboratory: binary images, component labeling, a small neural
network engine, and the counting/learnability experiment suite."""

from .bitgrid import (
    BitGrid,
    GenerationError,
    LabelGrid,
    bridge_pair,
    count_ones,
    hamming_distance,
    label_components,
    num_components,
)
from .synth import Dataset, GenConfig, ShapeSpec, gen_dataset

__version__ = "0.1.0"

__all__ = [
    "BitGrid",
    "Dataset",
    "GenConfig",
    "GenerationError",
    "LabelGrid",
    "ShapeSpec",
    "bridge_pair",
    "count_ones",
    "gen_dataset",
    "hamming_distance",
    "label_components",
    "num_components",
    "__version__",
]
