"""Exception types shared across the package."""


class SsdlError(Exception):
    """Base class for all package-specific errors."""


class InvalidConfigurationError(SsdlError):
    """A parameter or configuration value violates its contract."""


class NumericalError(SsdlError):
    """An iterative solve produced non-finite values or failed to make progress."""

    def __init__(self, message, iteration=None, history=None):
        super().__init__(message)
        self.iteration = iteration
        self.history = history


class DataError(SsdlError):
    """Base class for dataset ingestion failures."""


class DataFormatError(DataError):
    """Malformed container: bad magic number or unparseable cell."""


class DataTruncatedError(DataError):
    """File ended before the declared payload was read."""


class DataAlignmentError(DataError):
    """Image and label containers disagree on the sample count."""


class ModelIOError(SsdlError):
    """Base class for model container failures."""


class ModelFormatError(ModelIOError):
    """Not a model container (bad magic string)."""


class ModelVersionError(ModelIOError):
    """Container format version is not supported."""


class ModelTruncatedError(ModelIOError):
    """Container ended before all payloads were read."""


class ModelShapeError(ModelIOError):
    """Container header dimensions are inconsistent."""
