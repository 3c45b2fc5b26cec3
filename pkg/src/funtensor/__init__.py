"""Functional Bayesian Tucker/CP decomposition for continuous-indexed tensors.

Sparse observations indexed by real-valued coordinates are modeled as a
Tucker (or CP) interaction of per-mode latent functions with Matern GP
priors, represented as state-space chains for linear-time inference by
message passing, Kalman filtering and RTS smoothing.
"""

__version__ = "0.1.0"

from .data import Dataset, build_dataset, gen_synthetic, load_csv, save_csv, split
from .kernels import MaternHyper
from .model import FitConfig, FittedModel, InferenceError, fit

__all__ = [
    "Dataset",
    "FitConfig",
    "FittedModel",
    "InferenceError",
    "MaternHyper",
    "build_dataset",
    "fit",
    "gen_synthetic",
    "load_csv",
    "save_csv",
    "split",
    "__version__",
]
