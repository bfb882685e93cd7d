"""Exception hierarchy.

Each family maps onto a CLI exit code: validation problems exit 1, data
coverage problems exit 2 and numerical degeneracies exit 3.
"""


class ImomlabError(Exception):
    exit_code = 1


class ValidationError(ImomlabError, ValueError):
    exit_code = 1


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnsupportedMetricError(ValidationError):
    pass


class CoverageError(ImomlabError):
    exit_code = 2


class InsufficientDataError(CoverageError):
    pass


class ThinUniverseError(InsufficientDataError):
    pass


class DegenerateError(ImomlabError, ArithmeticError):
    exit_code = 3


class SingularityError(DegenerateError):
    pass


class DegenerateVarianceError(DegenerateError):
    pass


class DomainError(DegenerateError):
    pass
