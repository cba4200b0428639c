"""Sparse GLM regression with concave penalties in a thresholded parameter space."""
from .glm import Family
from .penalty import Penalty, PenaltyKind, RegObjective

__version__ = "0.1.0"

__all__ = ["Family", "Penalty", "PenaltyKind", "RegObjective", "__version__"]
