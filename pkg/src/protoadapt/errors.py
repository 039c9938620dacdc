"""Exception hierarchy.

Every error raised by this package derives from ProtoAdaptError so callers
(and the CLI) can distinguish our validation failures from genuine bugs.
"""


class ProtoAdaptError(Exception):
    """Base class for all package errors."""


class FormatError(ProtoAdaptError):
    """Malformed feature-pack or checkpoint file (bad magic, truncated header)."""


class ValidationError(ProtoAdaptError):
    """Structurally readable input that violates a documented invariant."""


class InsufficientDataError(ValidationError):
    """A class does not have enough object records for the requested episode."""


class InsufficientBackgroundError(ValidationError):
    """Fewer background records available than requested."""


class ShapeError(ProtoAdaptError):
    """Tensor shape mismatch; message carries both shapes."""


class NumericError(ProtoAdaptError):
    """A tensor operation produced a non-finite value."""


class ContractError(ProtoAdaptError):
    """An operation was called outside its documented preconditions."""


class ConfigError(ProtoAdaptError):
    """Invalid finetuning or evaluation configuration."""


class TrainingError(ProtoAdaptError):
    """Finetuning diverged; carries the last finite log entries."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log


class GradCheckError(ProtoAdaptError):
    """The finite-difference gradient checker could not run to completion."""
