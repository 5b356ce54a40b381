"""Exception hierarchy shared by the library and the command-line front end."""


class UpccdError(Exception):
    """Base class for all errors raised by this package."""

    kind = "error"


class ContractError(UpccdError, ValueError):
    """An argument violates a documented precondition."""

    kind = "contract"


class InputError(UpccdError):
    """Bad command-line usage or configuration."""

    kind = "input"


class FcidumpParseError(UpccdError, ValueError):
    kind = "parse"

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class SizeLimitError(UpccdError):
    """A requested basis or register exceeds a configured cap."""

    kind = "size"


class ConvergenceError(UpccdError):
    kind = "numerical"

    def __init__(self, message, residual=None, iterations=None):
        self.residual = residual
        self.iterations = iterations
        super().__init__(message)
