"""Exception hierarchy.

Every error raised on purpose by the package derives from ``HawkesError`` so
the CLI can map it onto a stable exit code.
"""


class HawkesError(Exception):
    """Base class for package errors."""

    exit_code = 4


class ConfigError(HawkesError, ValueError):
    exit_code = 2


class DataError(HawkesError, ValueError):
    exit_code = 3


class NumericalError(HawkesError, ArithmeticError):
    exit_code = 4


# model / parameter validity
class InvalidSpec(ConfigError):
    pass


class InvalidParams(ConfigError):
    pass


class NonPositiveMark(DataError):
    pass


class InvalidNormalization(InvalidParams):
    pass


class MissingMark(DataError):
    pass


class SpecMismatch(DataError):
    pass


class NonLinearSpec(InvalidSpec):
    pass


class PerReceiverRequired(InvalidSpec):
    pass


class EmptyComponent(DataError):
    pass


class RequiresRepetitions(DataError):
    pass


class UnknownExperiment(ConfigError):
    pass


# numerics
class NonFiniteLikelihood(NumericalError):
    pass


class SingularFisher(NumericalError):
    pass


class NonPositiveVariance(NumericalError):
    pass


class NotNormalizedLink(InvalidSpec):
    pass


class XiTooLarge(NumericalError):
    pass


class CapExceeded(NumericalError):
    pass


class TooManyFailures(NumericalError):
    pass


# stats
class DomainError(HawkesError, ValueError):
    exit_code = 2


class EmptySample(DomainError):
    pass


class NonPositiveIncrement(DomainError):
    pass


class TooFewSamples(DomainError):
    pass
