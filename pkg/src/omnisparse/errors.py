"""Exception hierarchy shared by every module.

Each class carries the CLI exit code its failures map to.
"""


class OmniSparseError(Exception):
    exit_code = 1


class ParameterError(OmniSparseError, ValueError):
    exit_code = 1


class DimensionError(OmniSparseError, ValueError):
    exit_code = 2


class NumericError(OmniSparseError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class StateError(OmniSparseError, RuntimeError):
    exit_code = 1


class ParseError(OmniSparseError, ValueError):
    exit_code = 2

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CorruptionError(OmniSparseError):
    exit_code = 2


class VersionError(OmniSparseError):
    exit_code = 2


class SearchSpaceTooLarge(OmniSparseError):
    exit_code = 1


class InfeasibleConstraint(OmniSparseError):
    exit_code = 4

    def __init__(self, tau, smallest):
        super().__init__(
            f"no front member fits within {tau} bytes; smallest achievable size is {smallest} bytes"
        )
        self.tau = tau
        self.smallest = smallest
