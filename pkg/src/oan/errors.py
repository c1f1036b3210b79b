"""Exception taxonomy shared across the package.

Every class also inherits the closest builtin (ValueError, ArithmeticError,
RuntimeError) so callers can catch either the specific type or the generic one.
"""


class OanError(Exception):
    """Base class for all package-specific failures."""


class ShapeError(OanError, ValueError):
    """Operands have incompatible shapes; the message names both."""


class ConfigError(OanError, ValueError):
    """A parameter is outside its documented domain."""


class NumericError(OanError, ArithmeticError):
    """A computation produced or received a non-finite or invalid value."""


class DegenerateVectorError(NumericError):
    """A vector with (near-)zero norm reached a normalization step."""


class DeterminismError(OanError, RuntimeError):
    """Two evaluations of a supposedly deterministic function disagreed."""


class EmptyBatchError(OanError, ValueError):
    """A batch-level operation received zero instances."""


class InsufficientPairsError(OanError, ValueError):
    """A pairwise operation received fewer than two rows."""


class LabelError(OanError, ValueError):
    """A class label is outside the valid range."""


class DistributionError(OanError, ValueError):
    """A row expected to be a probability vector is not."""


class FormatError(OanError, ValueError):
    """A serialized file is malformed; the message carries a byte offset."""


class VersionError(FormatError):
    """A serialized file has a recognized layout but an unsupported version."""
