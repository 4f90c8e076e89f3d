"""Exception types shared across the package."""


class CsiharError(Exception):
    """Base class for all package errors."""


class ContractError(CsiharError, ValueError):
    """A documented precondition was violated by the caller."""


class DimensionError(ContractError):
    """Tensor shapes do not conform for an operation."""


class NumericError(CsiharError, ArithmeticError):
    """NaN or infinite values where finite numbers are required."""


class FormatError(CsiharError):
    """A binary or text file does not match its expected layout."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(CsiharError, ValueError):
    """Invalid configuration values or configuration file content."""


class DatasetError(CsiharError, ValueError):
    """A dataset is empty or lacks a required class."""
