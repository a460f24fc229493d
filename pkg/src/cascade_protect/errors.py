"""Exception hierarchy. Each class carries a stable ``code`` string used in
reports and for mapping to CLI exit codes."""

from __future__ import annotations


class CascadeError(Exception):
    code = "CASCADE_ERROR"
    exit_code = 3


class ParseError(CascadeError):
    code = "PARSE_ERROR"
    exit_code = 1


class InvalidCaseError(CascadeError):
    code = "INVALID_CASE"
    exit_code = 1

    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations = list(violations) if violations is not None else [message]


class InvalidScenarioError(CascadeError):
    code = "INVALID_SCENARIO"
    exit_code = 1


class DimensionMismatchError(CascadeError, ValueError):
    code = "DIMENSION_MISMATCH"
    exit_code = 3


class SingularSystemError(CascadeError):
    code = "SINGULAR_SYSTEM"
    exit_code = 3


class NonpositiveThresholdError(CascadeError, ValueError):
    code = "NONPOSITIVE_THRESHOLD"
    exit_code = 1


class StepOutOfRangeError(CascadeError, IndexError):
    code = "STEP_OUT_OF_RANGE"
    exit_code = 1


class EmptyIntersectionError(CascadeError):
    """The robust feasible set appears to be empty; injection control alone
    cannot terminate the predicted cascades."""

    code = "EMPTY_INTERSECTION"
    exit_code = 2


class PostcheckFailedError(CascadeError):
    code = "POSTCHECK_FAILED"
    exit_code = 3
