"""Exception hierarchy shared by all modules."""


class ErcDenoiseError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(ErcDenoiseError, ValueError):
    pass


class DomainError(ErcDenoiseError, ValueError):
    """Input outside the support of a density or function."""


class InsufficientDataError(ErcDenoiseError, ValueError):
    pass


class DegenerateError(ErcDenoiseError, ValueError):
    """A statistic is undefined (zero variance, zero contrast, ...)."""


class InvalidSpecError(ErcDenoiseError, ValueError):
    pass


class ParseError(ErcDenoiseError, ValueError):
    """Malformed file; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(ErcDenoiseError, ValueError):
    pass
