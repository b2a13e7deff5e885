class LoadcastError(Exception):
    pass


class ConfigError(LoadcastError):
    """
    Invalid backtest configuration. Command line exit code 2.
    """


class DataError(LoadcastError):
    """
    Input data cannot be used. Command line exit code 3.
    """


class ModelError(LoadcastError):
    """
    Numerical failure while fitting or running a model.
    """


# data side

class MissingColumn(DataError):
    pass


class NonMonotonicTimestamp(DataError):
    pass


class GapTooLarge(DataError):
    pass


class InvalidValue(DataError):
    pass


class DatasetTooShort(DataError):
    pass


class DayOutOfRange(DataError):
    pass


class InvalidScenario(ConfigError):
    pass


class InvalidSegmentation(ConfigError):
    pass


# model side

class SingularDesign(ModelError):
    pass


class InsufficientHistory(ModelError):
    pass


class MissingLag(ModelError):
    pass


class UncorrectableVariable(ModelError):
    pass


class NotForecastable(ModelError):
    pass


class NonFiniteLoss(ModelError):
    pass


class DimensionMismatch(ModelError):
    pass


class NonFiniteInput(ModelError):
    pass


class SearchFailed(ModelError):
    pass


class InvalidLevel(ModelError):
    pass


class NewtonDiverged(ModelError):
    pass


class InvalidHyperparameter(ModelError):
    pass


class NonFiniteForecast(ModelError):
    pass


class EmptyCandidates(ModelError):
    pass


class EmptyWindow(ModelError):
    pass


class MissingResidual(ModelError):
    pass


class BacktestError(LoadcastError):
    """
    Wraps a failure inside the day loop with the day (and hour, when known) it happened at.
    """
    def __init__(self, message, day=None, hour=None, cause=None):
        super().__init__(message)
        self.day = day
        self.hour = hour
        self.cause = cause

    def __str__(self):
        where = []
        if self.day is not None:
            where.append(f'day {self.day}')
        if self.hour is not None:
            where.append(f'hour {self.hour}')
        if not where:
            return super().__str__()
        return f'{super().__str__()} ({", ".join(where)})'
