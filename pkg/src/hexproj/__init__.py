"""Differentiable co-occurrence features and projection-based training heads.

Submodules: ``linalg``, ``netcore``, ``glcm``, ``nglcm``, ``hexhead``,
``advhead``, ``datasets``, ``harness`` (plus ``model``, ``estimator`` and
``cli``).
"""
from .datasets import LabeledImageSet, ShiftRecipe
from .estimator import HexClassifier
from .exceptions import (ConfigError, DimensionError, FormatError, HexprojError, InputError,
                         SingularMatrixError, StateError)
from .glcm import Direction, GLCMTransformer, glcm_count, quantize
from .harness import ExperimentConfig, RunResult, probe_experiment, run_experiment, wire_method
from .hexhead import HexHead, HexMode, hex_project, hex_project_ridge
from .nglcm import NGLCM, NglcmParams, nglcm_forward, staircase_phi

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DimensionError", "Direction", "ExperimentConfig", "FormatError",
    "GLCMTransformer", "HexClassifier", "HexHead", "HexMode", "HexprojError", "InputError",
    "LabeledImageSet", "NGLCM", "NglcmParams", "RunResult", "ShiftRecipe",
    "SingularMatrixError", "StateError", "glcm_count", "hex_project", "hex_project_ridge",
    "nglcm_forward", "probe_experiment", "quantize", "run_experiment", "staircase_phi",
    "wire_method",
]
