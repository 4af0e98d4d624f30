"""Numerical laboratory for the Langevin diffusion as a Wasserstein gradient flow of relative entropy."""

from .potential import Perturbation, Potential
from .measure import GridDensity
from .oracle import GaussianState

__all__ = ["Potential", "Perturbation", "GridDensity", "GaussianState"]
__version__ = "0.1.0"
