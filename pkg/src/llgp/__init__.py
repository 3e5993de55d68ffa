"""Matrix-free multi-output Gaussian processes with LMC kernels on interpolation grids."""

from .config import ModelConfig
from .data import MultiOutputDataset, load_dataset
from .kernel import LmcKernel, Representation
from .prediction import Posterior, evaluate, predict
from .training import train

__version__ = "0.1.0"

__all__ = [
    "LmcKernel",
    "ModelConfig",
    "MultiOutputDataset",
    "Posterior",
    "Representation",
    "evaluate",
    "load_dataset",
    "predict",
    "train",
]
