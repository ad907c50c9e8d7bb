"""Exception hierarchy shared by all estimators and the CLI."""


class MesRegError(Exception):
    """Base class for every error raised by this package."""


class DataError(MesRegError):
    """Input data could not be read or is inconsistent."""


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class DimensionError(DataError):
    pass


class LevelError(MesRegError, ValueError):
    """A probability level lies outside the open unit interval."""


class EstimationError(MesRegError):
    """Base class for failures inside an estimator."""


class ConvergenceError(EstimationError):
    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class SingularityError(EstimationError):
    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class InsufficientExceedancesError(EstimationError):
    pass


class DegenerateBandwidthError(EstimationError):
    pass


class InferenceUnavailableError(EstimationError):
    pass


class WindowError(EstimationError):
    pass


class UpdateDomainError(EstimationError):
    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class SimulationError(MesRegError):
    pass
