"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(ValueError):
    """A configuration value is invalid or inconsistent."""


class EmptyInputError(ValueError):
    """An operation received an empty input it cannot reduce."""


class GraphError(RuntimeError):
    """Misuse of the computation graph (e.g. a second backward pass)."""


class InsufficientHistoryError(ValueError):
    """A trajectory is too short for the requested operation."""


class EmptySceneError(ValueError):
    """A scene file contained no valid rows."""


class FormatError(ValueError):
    """A binary container has a bad header or an unsupported version."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""
