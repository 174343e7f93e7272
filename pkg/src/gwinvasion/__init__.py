"""Invasion percolation on Galton-Watson trees: simulation and numerics."""

__version__ = "0.1.0"

from .offspring import OffspringDistribution
from .survival import SurvivalSolver
from .tree import TreeArena
from .invasion import InvasionRun, backbone, certified_backbone, completed_backbone, invade
from .pivot_chain import PivotKernel, run_chain

__all__ = [
    "OffspringDistribution",
    "SurvivalSolver",
    "TreeArena",
    "InvasionRun",
    "invade",
    "backbone",
    "certified_backbone",
    "completed_backbone",
    "PivotKernel",
    "run_chain",
]
