"""Gromov-Monge embedding GAN at desk scale, with exact brute-force oracles."""
__version__ = "0.1.0"

from .gmegan import NetworkBundle, TrainConfig, generate, train
from .measures import EmpiricalMeasure, sample_latent, sample_mixture, scenario
from .otcore import BACKEND

__all__ = [
    "BACKEND",
    "EmpiricalMeasure",
    "NetworkBundle",
    "TrainConfig",
    "__version__",
    "generate",
    "sample_latent",
    "sample_mixture",
    "scenario",
    "train",
]
