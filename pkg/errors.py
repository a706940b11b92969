class TocError(Exception):
    """Base class for every error raised by the toolkit."""


class InvalidArgumentError(TocError, ValueError):
    pass


class SingularTargetError(InvalidArgumentError):
    """The steady-state input is undefined because 1 + eta * T equals zero."""


class ConfigurationError(TocError, ValueError):
    pass


class InsufficientDataError(TocError, ValueError):
    pass


class UndefinedRateError(TocError, ZeroDivisionError):
    pass


class OutputError(TocError, OSError):
    def __init__(self, path, reason):
        self.path = str(path)
        super().__init__(f"Failed to write {self.path}: {reason}")
