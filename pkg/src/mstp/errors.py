"""Exception hierarchy. Each family maps to one CLI exit code."""


class MSTPError(Exception):
    exit_code = 1


class ConfigError(MSTPError):
    exit_code = 2


class DataError(MSTPError, ValueError):
    exit_code = 3


class SchemaError(DataError):
    pass


class DomainError(DataError):
    pass


class PositivityError(DataError):
    pass


class MalformedTrajectoryError(DataError):
    pass


class NumericError(MSTPError, ArithmeticError):
    exit_code = 4


class DegenerateInformationError(NumericError):
    pass


class InfeasibleDantzigError(NumericError):
    """Raised when no w satisfies the sup-norm constraint.

    ``min_feasible_lambda`` holds the smallest lambda_w for which the
    program becomes feasible.
    """

    def __init__(self, message, min_feasible_lambda=None):
        super().__init__(message)
        self.min_feasible_lambda = min_feasible_lambda


class ConvergenceError(MSTPError):
    exit_code = 5
