"""Exception taxonomy mapped to CLI exit codes (1 data, 2 usage, 3 numeric)."""


class DataError(Exception):
    """Malformed or unusable input data. CLI exit code 1."""


class ParseError(DataError):
    """A single unreadable line in an input file; recoverable by skipping."""

    def __init__(self, path, line_no: int, reason: str):
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{self.path}:{line_no}: {reason}")


class NumericError(Exception):
    """Numerical failure (NaN gradients, zero-norm vectors). CLI exit code 3."""
