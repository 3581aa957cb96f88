"""Exception hierarchy.

Every error carries a short machine-readable ``code`` which the command line
front end prints as ``ERROR <code>: <detail>``.
"""

from __future__ import annotations


class SpdError(Exception):
    code = "spd"


class DomainError(SpdError, ValueError):
    """An argument lies outside the domain of a pricing formula."""

    code = "domain"


class ParityError(SpdError, ValueError):
    """Put-call quotes admit no real dividend yield."""

    code = "inconsistent-parity"


class EmptyQuotesError(SpdError, ValueError):
    code = "empty-quotes"


class InfeasibleConstraintError(SpdError):
    """The forward-price equality cannot be met on the probability simplex."""

    code = "infeasible-constraint"


class ConvergenceError(SpdError):
    """Iteration cap reached; ``best_residual`` holds the best KKT residual seen."""

    code = "no-convergence"

    def __init__(self, message: str, best_residual: float = float("nan"), best_x=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.best_x = best_x


class QuoteParseError(SpdError, ValueError):
    code = "parse"

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ModelFormatError(SpdError, ValueError):
    code = "model-format"


class StudyAbortedError(SpdError):
    """More than the tolerated fraction of Monte Carlo runs failed."""

    code = "study-aborted"
