"""Exception hierarchy shared across the package."""


class PosKernelError(Exception):
    """Base class for every error raised by poskernel."""


class DimensionError(PosKernelError, ValueError):
    pass


class ConfigError(PosKernelError, ValueError):
    pass


class InputError(PosKernelError, ValueError):
    pass


class InvariantError(PosKernelError, ValueError):
    """A structural invariant (triangularity, finiteness) does not hold."""


class ProbeError(PosKernelError, FloatingPointError):
    """Finite-difference probing hit a non-finite loss."""


class TrainingError(PosKernelError, FloatingPointError):
    pass


class DataError(PosKernelError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(DataError):
    pass
