"""Exception hierarchy shared across the package."""


class D2gpError(Exception):
    """Base class for all package errors."""


class ShapeError(D2gpError):
    """Operand shapes do not conform."""


class ContractError(D2gpError):
    """An operation was called outside its contract."""


class DegenerateInputError(D2gpError):
    """Input is mathematically degenerate (e.g. zero-norm vector)."""


class ParameterError(D2gpError):
    """A construction parameter is out of range."""


class CapabilityError(D2gpError):
    """Requested size exceeds what the dense code paths support."""


class NumericalError(D2gpError):
    """An iterative numerical routine failed to converge."""


class DivergenceError(D2gpError):
    """A solver iterate became non-finite."""

    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"non-finite iterate at iteration {iteration}")


class ConfigError(D2gpError):
    """Invalid or inconsistent configuration."""


class DataError(D2gpError):
    """Dataset is missing or unusable."""


class FormatError(D2gpError):
    """A serialized file is malformed."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class LookupErrorNamed(D2gpError):
    """A referenced artifact (weights, method) is missing."""
