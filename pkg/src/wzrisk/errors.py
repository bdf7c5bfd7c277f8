"""Exception hierarchy shared by the library and the command-line front end."""


class WzRiskError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class DomainError(WzRiskError, ValueError):
    """An argument lies outside the admissible domain of an operation."""

    exit_code = 3


class ConvergenceError(WzRiskError, RuntimeError):
    """A root search or quadrature failed to reach its tolerance.

    ``state`` carries whatever diagnostic information the solver had when it
    gave up (bracket endpoints, achieved tolerance, ...).
    """

    exit_code = 4

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = dict(state or {})


class DegenerateSeriesError(DomainError):
    """The fitted variance is zero, so the (w, z) transform is undefined."""


class MethodInapplicableError(DomainError):
    """A CI method cannot be applied at the given point (e.g. logit of 0 or 1)."""


class ParseError(WzRiskError):
    """Malformed input file."""

    exit_code = 2

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
