"""Shared exception types."""


class DataError(Exception):
    """Malformed or inconsistent input data.

    Carries file/line context when the problem was found while parsing.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:" if line is None else f"{path}:{line}:"
        super().__init__(f"{prefix} {message}" if prefix else message)


class NumericError(RuntimeError):
    """Non-finite value or a failed numeric tolerance during a run."""
