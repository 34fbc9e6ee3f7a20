"""Sketched random features for message-passing graph neural networks."""

from importlib.metadata import PackageNotFoundError, version as _version

from ._accel import BACKEND
from .graph import Dataset, Graph
from .kernels import FeatureMap, KernelKind, embed, fit_feature_map, kappa_exact
from .rng import RngState, seed_rng
from .sketch import KernelConfig, SketchOperator, SrfEmbedding, srf, srf_dataset

try:
    __version__ = _version("artifact")
except PackageNotFoundError:
    __version__ = "0.0.0"

__all__ = [
    "BACKEND",
    "Dataset",
    "FeatureMap",
    "Graph",
    "KernelConfig",
    "KernelKind",
    "RngState",
    "SketchOperator",
    "SrfEmbedding",
    "__version__",
    "embed",
    "fit_feature_map",
    "kappa_exact",
    "seed_rng",
    "srf",
    "srf_dataset",
]
