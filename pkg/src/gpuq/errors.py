"""Exception types. Exit codes are used by the command-line runner."""


class GpuqError(Exception):
    exit_code = 1


class ConfigError(GpuqError, ValueError):
    exit_code = 2


class IngestionError(GpuqError, ValueError):
    exit_code = 3


class NumericError(GpuqError, ArithmeticError):
    exit_code = 4


class NotPositiveDefiniteError(NumericError):
    pass
