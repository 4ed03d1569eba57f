"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid model or experiment configuration."""


class ShapeError(ValueError):
    """Array dimensions incompatible with the operation."""


class EmptyInputError(ValueError):
    """An operation received no data."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class EmptyCalibrationError(ValueError):
    """Calibration requires at least one score."""


class PositivityError(ValueError):
    """A normalizer output violated the positivity contract."""


class SplitIntegrityError(ValueError):
    """Data split index sets overlap or do not cover the dataset."""


class InsufficientDataError(ValueError):
    """Not enough rows to perform the requested split or fit."""


class EncoderNotFrozenError(ValueError):
    """A pretext task was handed a trainable encoder."""


class CsvParseError(ValueError):
    """CSV ingestion failed; message carries row/column coordinates."""


class DegenerateInputError(ValueError):
    """Input carries no signal (e.g. zero covariance) for the operation."""


class UndefinedCorrelationError(ValueError):
    """Correlation undefined because one input has zero variance."""


class InsufficientReplicatesError(ValueError):
    """Confidence interval over seeds needs at least two replicates."""
