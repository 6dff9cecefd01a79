"""Delay and effective-capacity analysis of the typical link in Poisson bipolar networks."""

from .geometry import BipolarNetwork, NetworkParams, sample_network
from .numerics import Tolerances
from .simulator import SimConfig

__all__ = ["BipolarNetwork", "NetworkParams", "SimConfig", "Tolerances", "sample_network"]
__version__ = "0.1.0"
