"""Exception types shared across the package."""


class MFDGMError(Exception):
    """Base class for all package errors."""


class ShapeError(MFDGMError, ValueError):
    """Array shapes or dimensions do not match the declared architecture."""


class UsageError(MFDGMError, ValueError):
    """An operation was called with arguments outside its contract."""


class DomainError(MFDGMError, ValueError):
    """A quantity left its mathematical domain (non-finite input, log of
    a non-positive density, point outside the problem box)."""

    def __init__(self, message, t=None, x=None, sample_index=None):
        super().__init__(message)
        self.t = t
        self.x = x
        self.sample_index = sample_index


class NumericError(MFDGMError, RuntimeError):
    """A non-finite value appeared mid-computation."""

    def __init__(self, message, sample_index=None, iteration=None):
        super().__init__(message)
        self.sample_index = sample_index
        self.iteration = iteration


class ConfigError(MFDGMError, ValueError):
    """Invalid or unknown experiment configuration."""


class CheckpointError(MFDGMError, RuntimeError):
    """A checkpoint file could not be loaded."""
