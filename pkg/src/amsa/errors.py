"""Exception hierarchy.

Config-level problems derive from :class:`ConfigError` and data problems from
:class:`DataError`; the CLI maps them to exit codes 2 and 4.
"""


class AmsaError(Exception):
    pass


class ConfigError(AmsaError, ValueError):
    pass


class DataError(AmsaError, ValueError):
    pass


class InvalidParams(ConfigError):
    pass


# market data
class MalformedRow(DataError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class NonMonotonicTimestamp(MalformedRow):
    pass


class CrossedBook(MalformedRow):
    pass


class UnsortedLevels(MalformedRow):
    pass


class EmptyDay(DataError):
    pass


# exchange
class ExchangeError(AmsaError):
    pass


class InsufficientBalance(ExchangeError):
    pass


class SideOccupied(ExchangeError):
    pass


class UnknownOrder(ExchangeError, KeyError):
    pass


class InvalidMid(ExchangeError, ValueError):
    pass


# strategy / controller / learning
class EmptyWindow(DataError):
    pass


class MissingAssetData(DataError):
    pass


class InsufficientData(ConfigError):
    """Dataset too short for the requested period length."""


class InvalidNav(ValueError, AmsaError):
    pass


class TooShort(DataError):
    pass


class MissingMetricDay(DataError):
    pass


class BadAxis(ValueError, AmsaError):
    pass
