"""
Custom exceptions for paraformer-desk.
"""

class ParaFormerError(Exception):
    """Base exception for all paraformer-desk errors."""
    pass

class UsageError(ParaFormerError):
    """Raised when the command line cannot be understood."""
    pass

class ConfigurationError(ParaFormerError):
    """Raised when there's a configuration error."""
    pass

class StorageError(ParaFormerError):
    """Raised when an artifact cannot be read or written."""
    pass

class ContractError(ParaFormerError):
    """Raised when an operation's pre- or post-condition is violated."""
    pass

class DimensionError(ContractError):
    """Raised when tensor shapes are incompatible for an operation."""
    pass

class TensorIndexError(ContractError):
    """Raised when a row or element index is out of range."""
    pass

class EmptyInputError(ContractError):
    """Raised when a point set has no keypoints."""
    pass

class IncompatibleCheckpointError(ParaFormerError):
    """Raised when a weight or dataset file does not match what the caller expects."""
    pass

class DataGenerationError(ParaFormerError):
    """Raised when a synthetic sample cannot be drawn within the retry budget."""
    pass

class NumericError(ParaFormerError):
    """Raised when a computation produces NaN/Inf or a gradient check fails."""
    pass
