"""Continuous-time structural equation models fitted by Kalman-filter ML."""
from .discretize import discretize, stationary, transition_parts
from .estimate import (CtsemFit, ModelComparison, StandardizedLoadings, compare_models,
                       fit, standardized_loadings)
from .kalman import kalman_loglik
from .model import CtsemDataset, CtsemModelSpec, ParticipantData

__all__ = [
    "CtsemDataset", "CtsemFit", "CtsemModelSpec", "ModelComparison", "ParticipantData",
    "StandardizedLoadings", "compare_models", "discretize", "fit", "kalman_loglik",
    "standardized_loadings", "stationary", "transition_parts",
]
