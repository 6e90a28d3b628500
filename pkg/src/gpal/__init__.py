"""Gaussian-process response models with active learning under input and output noise.

Submodules:

``core``        datasets, model specs, hyperparameters
``kernel``      correlation and covariance assembly
``gp``          likelihood, fitting and BLUP prediction
``fisher``      hyperparameter information and D-optimality
``design``      maximin Latin hypercube designs
``oracle``      synthetic ground-truth surface
``evaluation``  MAD and leave-one-out scores
``active``      selectors, stopping rule and the sequential loop
``harness``     replayable comparison runs
``cli``         the ``gpal`` command
"""
from .core import Dataset, Hyperparameters, ModelSpec, Variant
from .gp import FitConfig, FittedModel, fit, predict, predict_variance

__all__ = [
    "Dataset",
    "FitConfig",
    "FittedModel",
    "Hyperparameters",
    "ModelSpec",
    "Variant",
    "fit",
    "predict",
    "predict_variance",
]
