"""Exception types shared across the package.

The CLI maps each family onto an exit code: configuration problems exit 1,
bad or missing data exit 2, numeric failures exit 3.
"""


class ConfigError(ValueError):
    """Invalid run configuration (bad flag combination, missing path)."""


class DataError(ValueError):
    """Malformed or inconsistent input data: WAV, protocol, scores, checkpoints."""


class CheckpointError(DataError):
    pass


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


class NonFiniteLossError(NumericError):
    def __init__(self, epoch: int, batch_index: int, loss: float):
        self.epoch = epoch
        self.batch_index = batch_index
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, batch {batch_index}"
        )
