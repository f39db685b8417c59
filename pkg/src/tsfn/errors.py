"""Exception types raised across the package."""


class TSFNError(Exception):
    """Base class for all package errors."""


class DimensionError(TSFNError, ValueError):
    """Tensor extents do not conform.

    ``axis`` names the offending axis when one can be identified.
    """

    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class InvalidInputError(TSFNError, ValueError):
    """Input is well-typed but unusable (empty axis, too-short clip, ...)."""


class ConfigError(TSFNError, ValueError):
    """A configuration object violates its invariants."""


class DistanceRangeError(TSFNError, ValueError):
    """A camera distance lies outside the supported [4, 28] m range."""


class IncompatibleCheckpointError(TSFNError, ValueError):
    """A checkpoint does not match the model or dataset it is used with."""


class NonFiniteError(TSFNError, FloatingPointError):
    """Training produced a NaN/Inf; ``name`` identifies the first bad tensor."""

    def __init__(self, message, name=None):
        super().__init__(message)
        self.name = name
