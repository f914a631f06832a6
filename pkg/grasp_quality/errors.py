"""
Error taxonomy for the grasp quality toolkit
"""

from typing import Optional


class GraspLabError(Exception):
    """Base class for every error raised by the toolkit"""


class ValidationFailure(GraspLabError):
    """Errors caused by bad inputs or configuration (CLI exit code 1)"""


class RuntimeFailure(GraspLabError):
    """Errors raised while doing otherwise valid work (CLI exit code 2)"""


class ConfigError(ValidationFailure, ValueError):
    """A configuration violates one of its rules"""


class DimensionError(ValidationFailure, ValueError):
    """Tensor extents do not line up"""


class ContractError(ValidationFailure):
    """A caller broke an operation precondition"""


class SplitError(ValidationFailure):
    """A dataset cannot be partitioned as requested"""


class FormatError(ValidationFailure):
    """A binary file does not follow its layout"""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class TrainingError(RuntimeFailure):
    """Training diverged or hit a non-finite gradient"""

    def __init__(self, message: str, parameter: Optional[str] = None, step: int = -1):
        self.parameter = parameter
        self.step = step
        if parameter is not None:
            message = f"{message} in {parameter}"
        if step >= 0:
            message = f"{message} at step {step}"
        super().__init__(message)


class GenerationError(RuntimeFailure):
    """The synthetic generator could not produce a requested example"""


class CheckpointIOError(RuntimeFailure, OSError):
    """A file ended early or could not be written"""


class TruncatedFileError(FormatError):
    """A binary file ended before its declared content"""


class GradientCheckError(RuntimeFailure):
    """Analytic and finite-difference gradients disagree"""
