"""Exception types raised across the package."""


class StreamCLError(Exception):
    """Base class for all package errors."""


class InputShapeError(StreamCLError, ValueError):
    pass


class NumericOverflowError(StreamCLError, FloatingPointError):
    """A loss became non-finite during training."""

    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index


class PenaltyBeforeConsolidationError(StreamCLError, RuntimeError):
    pass


class PrematureUpdateError(StreamCLError, RuntimeError):
    pass


class ConfigurationError(StreamCLError, ValueError):
    pass


class SchemaError(StreamCLError, ValueError):
    """CSV header or row does not match the declared column layout."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ParseError(SchemaError):
    pass


class NormalizationError(StreamCLError, ValueError):
    pass


class ReportError(StreamCLError, ValueError):
    pass
