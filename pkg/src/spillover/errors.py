"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SpilloverError(Exception):
    exit_code = 1


class ConfigError(SpilloverError, ValueError):
    exit_code = 2


class DataError(SpilloverError, ValueError):
    exit_code = 3


class NumericalError(SpilloverError, ArithmeticError):
    exit_code = 4


class RankDeficientError(NumericalError):
    """Design matrix without full column rank; ``columns`` names the offenders."""

    def __init__(self, message: str, columns: list[str] | None = None):
        super().__init__(message)
        self.columns = list(columns or [])
