"""Relation-network models for matrix-completion puzzles.

The package bundles a minimal differentiable tensor substrate, magnitude
encoding of pixel intensities, the panel-embedding/relation-layer model,
Adam and LAMB optimizers, a micro-scale procedural puzzle generator with an
independent soundness verifier, and a training/evaluation harness with a CLI.
"""

from .encoding import MEConfig
from .model import ModelConfig, ModelParams, init_params, predict, wren_forward
from .optim import OptimizerConfig
from .tensor import Tape, Tensor

__version__ = "0.1.0"

__all__ = [
    "MEConfig",
    "ModelConfig",
    "ModelParams",
    "OptimizerConfig",
    "Tape",
    "Tensor",
    "init_params",
    "predict",
    "wren_forward",
    "__version__",
]
