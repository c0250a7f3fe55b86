"""Exception hierarchy.

Errors are split by who is at fault so the CLI can map them to exit codes:
``ConfigError`` (bad parameters, exit 2), ``DataError`` (bad inputs or
corrupt files, exit 3) and ``InvariantViolation`` (a bug, exit 4).
"""


class MVQError(Exception):
    pass


class ConfigError(MVQError, ValueError):
    pass


class DataError(MVQError, ValueError):
    pass


class InvariantViolation(MVQError, AssertionError):
    pass


class CoutNotMultipleOfD(ConfigError):
    pass


class DNotMultipleOfM(ConfigError):
    pass


class TooFewSubvectors(ConfigError):
    pass


class ConfigInvalid(ConfigError):
    pass


class QNotIntegral(ConfigError):
    pass


class DimensionMismatch(DataError):
    pass


class InvalidPopcount(DataError):
    pass


class WrongPopcount(DataError):
    pass


class IdOutOfRange(DataError):
    pass


class IndexOutOfRange(DataError):
    pass


class BadMagic(DataError):
    pass


class TruncatedStream(DataError):
    pass


class CorruptLengths(DataError):
    pass
