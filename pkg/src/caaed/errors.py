"""Exception types shared across the package.

Each carries the CLI exit code it maps to.
"""


class CaaedError(Exception):
    exit_code = 1


class UsageError(CaaedError):
    exit_code = 1


class ConfigError(CaaedError, ValueError):
    exit_code = 1


class DimensionError(CaaedError, ValueError):
    exit_code = 1


class DataError(CaaedError, ValueError):
    exit_code = 2


class NumericError(CaaedError, ArithmeticError):
    exit_code = 3
