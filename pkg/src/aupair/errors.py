"""Exception hierarchy shared across the pipeline.

The CLI maps these onto exit codes: configuration problems exit 2, data
problems exit 3, training divergence exits 4.
"""


class AupairError(Exception):
    exit_code = 1


class ConfigurationError(AupairError, ValueError):
    exit_code = 2


class DependencyError(ConfigurationError):
    """A pipeline stage was requested before the stages it needs exist."""


class UsageError(AupairError, RuntimeError):
    exit_code = 2


class DataError(AupairError, ValueError):
    exit_code = 3


class ShapeError(DataError):
    pass


class InvalidInputError(DataError):
    pass


class SchemaError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class AlignmentError(DataError):
    pass


class UndefinedMetricError(DataError):
    pass


class DivergenceError(AupairError, ArithmeticError):
    exit_code = 4

    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss!r})")
        self.epoch = epoch
        self.loss = loss
