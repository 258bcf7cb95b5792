"""Desk-scale medication-adherence video VQA pipeline.

A small, fully testable implementation of a video question-answering
stack for observed-therapy adherence review: a reverse-mode autodiff
tensor core, toy visual/text encoders with contrastive pre-alignment,
spatio-temporal fusion into a unified visual feature, an MLP projection
into a causal decoder (with LoRA adapters), two-stage training, an
imbalance-aware synthetic data pipeline, a five-dimension evaluation
harness, and a manifest-logging CLI.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .config import PipelineConfig, TrainConfig, read_config, write_config
from .errors import ConfigurationError, ContractError, DataError
from .tensor import Tensor

__all__ = [
    "__version__",
    "PipelineConfig",
    "TrainConfig",
    "read_config",
    "write_config",
    "ConfigurationError",
    "ContractError",
    "DataError",
    "Tensor",
]
