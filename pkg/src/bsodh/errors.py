"""Exception hierarchy.

Every error raised by the library derives from :class:`BSODHError` and from
the closest builtin (``ValueError`` for bad inputs) so callers can catch
either.
"""


class BSODHError(Exception):
    """Base class for all library errors."""


class InvalidInputError(BSODHError, ValueError):
    """Non-finite or otherwise invalid numeric input."""


class ShapeError(BSODHError, ValueError):
    """Array dimensions do not agree."""


class ConfigError(BSODHError, ValueError):
    """Invalid hyperparameter, flag or run configuration."""


class ConsistencyError(BSODHError, ValueError):
    """Paired files or arrays disagree (e.g. feature and label counts)."""


class NumericError(BSODHError, ArithmeticError):
    """A linear-algebra step failed."""


class FormatError(BSODHError, ValueError):
    """Malformed file payload.

    ``offset`` is the byte offset (binary formats) or line number (CSV) at
    which the problem was detected, when known.
    """

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
