"""Exception hierarchy.

Every error carries a pipeline ``stage`` tag so the CLI can report where a
run failed, and an ``exit_code`` matching the CLI contract
(1 validation, 2 numerical failure, 3 I/O).
"""


class LcKmpError(Exception):
    exit_code = 1

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage

    def __str__(self):
        msg = super().__str__()
        return f"[{self.stage}] {msg}" if self.stage else msg


class ValidationError(LcKmpError, ValueError):
    """Bad input: shapes, ranges, malformed files or configs."""

    exit_code = 1


class NumericalError(LcKmpError, ArithmeticError):
    """A factorization, solver or fitting procedure broke down."""

    exit_code = 2


class DataFileError(LcKmpError):
    """Unreadable or unwritable file."""

    exit_code = 3
