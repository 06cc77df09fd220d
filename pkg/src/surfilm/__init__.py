"""Finite-volume simulator for insoluble-surfactant spreading on a thin film.

Implements the degenerate original system and its eps-regularized
counterpart, with runtime checks of mass conservation, the lower barriers
and the energy inequality.
"""

from .constitutive import ModelParams, SigmaModel
from .dynamics import State, StepControl, lift, run, step
from .grid import Field, Grid

__all__ = ["Field", "Grid", "ModelParams", "SigmaModel", "State", "StepControl", "lift",
           "run", "step"]
__version__ = "0.1.0"
