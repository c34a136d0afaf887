"""Exception types shared across the package."""


class ContractError(ValueError):
    """A call violated an operation's precondition."""


class ShapeError(ContractError):
    """Operand dimensions do not agree."""


class ConfigError(ValueError):
    """Invalid configuration value or missing input."""


class FormatError(ValueError):
    """Malformed on-disk tensor or record file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UndefinedMetricError(ValueError):
    """Metric is undefined for the given labels, e.g. a single class."""


class NumericalAbort(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, **diagnostics):
        details = ", ".join(f"{k}={v}" for k, v in diagnostics.items())
        super().__init__(f"{message} ({details})" if details else message)
        self.diagnostics = diagnostics
