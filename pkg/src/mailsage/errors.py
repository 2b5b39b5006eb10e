"""Error taxonomy shared across the pipeline.

Each class maps to a distinct process exit code so operators can tell a bad
config from bad data from a numerical failure without reading tracebacks.
"""


class MailsageError(Exception):
    exit_code = 1


class ConfigError(MailsageError):
    """Bad or unknown configuration keys/values."""

    exit_code = 2


class DataError(MailsageError):
    """Unreadable, malformed, or out-of-range input data."""

    exit_code = 3


class NumericError(MailsageError):
    """Non-finite values or degenerate numeric state."""

    exit_code = 4
