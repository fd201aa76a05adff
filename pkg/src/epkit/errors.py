"""Exception hierarchy shared by every epkit module.

Each exception carries the CLI exit code it maps to: 2 for bad or
inconsistent data, 3 for numeric failures.
"""


class EpkitError(Exception):
    exit_code = 2


class DataError(EpkitError, ValueError):
    exit_code = 2


class NumericError(EpkitError, ArithmeticError):
    exit_code = 3


# signal-core
class MissingFile(DataError, FileNotFoundError):
    pass


class TruncatedData(DataError):
    pass


class InvalidManifest(DataError):
    pass


class NonFinite(NumericError):
    pass


# preprocess
class WindowOutOfRange(DataError):
    pass


class TooShort(DataError):
    pass


class MissingTemplate(DataError):
    pass


class InvalidSpec(DataError):
    pass


# epochs
class NoValidEpochs(DataError):
    pass


class Empty(DataError):
    pass


class TooFewEpochs(DataError):
    pass


# metrics
class NoN1(DataError):
    pass


class NoZeroCrossing(DataError):
    pass


# timefreq
class WindowTooShort(DataError):
    pass


class MissingCenter(DataError):
    pass


# conduction
class UndefinedOnset(DataError):
    pass


class NonPositiveDelay(NumericError):
    pass


class NonPositiveDiameter(NumericError):
    pass


# stats
class SampleTooSmall(NumericError):
    pass


class SampleTooLarge(NumericError):
    pass


class LengthMismatch(NumericError):
    pass


class ZeroVariance(NumericError):
    pass


class EmptySample(NumericError):
    pass


class DegenerateX(NumericError):
    pass


# synth
class KernelOutOfWindow(DataError):
    pass


class TrainTooLong(DataError):
    pass


# cli
class ConfigError(EpkitError):
    exit_code = 1


class UnknownCommand(EpkitError):
    exit_code = 1
