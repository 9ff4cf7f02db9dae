"""Exception hierarchy shared across the package.

ConfigError maps to CLI exit code 2, DataError to exit code 3.
"""


class RxDecodeError(Exception):
    pass


class ConfigError(RxDecodeError):
    """Invalid configuration, missing files, unknown options."""


class DataError(RxDecodeError):
    """Invalid or inconsistent data (empty corpus, malformed files, ...)."""


class LmParseError(DataError):
    """Malformed language-model file; carries the offending line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class GrammarError(DataError):
    """Invalid grammar spec or enumeration overflow (carries exact count)."""

    def __init__(self, message: str, count: int | None = None):
        super().__init__(message)
        self.count = count
