"""Exception hierarchy. The CLI maps each family to an exit code."""


class CovmodError(Exception):
    exit_code = 1


class InputError(CovmodError, ValueError):
    """Bad input values (non-finite numbers, mismatched ids, ...)."""

    exit_code = 2


class ParseError(InputError):
    exit_code = 2


class TransformError(InputError):
    """A natural parameter sits on the boundary and has no finite image."""


class ConfigError(CovmodError, ValueError):
    exit_code = 3


class FitError(CovmodError, RuntimeError):
    exit_code = 4


class DiagnosticError(FitError):
    """MCMC acceptance rates ended outside the usable range."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
