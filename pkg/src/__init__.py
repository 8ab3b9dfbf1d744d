"""
paraformer-desk - parallel attention feature matching on a from-scratch autodiff core.

Main exports:
    - ParaFormer, ModelConfig: model and its configuration
    - build, load_model: fresh or checkpointed models
    - generate_dataset, train_model, match_dataset, evaluate_dataset, flops_report:
      convenience functions behind the command line
"""

__version__ = '0.3.0'

from .models.config import ModelConfig, ablation_config
from .models.paraformer import ParaFormer, build, load_model, save

from .api import (
    generate_dataset,
    train_model,
    match_dataset,
    evaluate_dataset,
    flops_report,
)

from .exceptions import (
    ParaFormerError,
    UsageError,
    ConfigurationError,
    StorageError,
    ContractError,
    IncompatibleCheckpointError,
    DataGenerationError,
    NumericError,
)

__all__ = [
    'ParaFormer',
    'ModelConfig',
    'ablation_config',
    'build',
    'load_model',
    'save',
    '__version__',
    'generate_dataset',
    'train_model',
    'match_dataset',
    'evaluate_dataset',
    'flops_report',
    'ParaFormerError',
    'UsageError',
    'ConfigurationError',
    'StorageError',
    'ContractError',
    'IncompatibleCheckpointError',
    'DataGenerationError',
    'NumericError',
]
