"""Exception hierarchy. Every error raised by the package derives from ``EdmriError``."""


class EdmriError(Exception):
    pass


class EmptyStructureError(EdmriError, ValueError):
    """A structure (prostate, fascia, selection) required by an operation is empty."""


class InvalidLabelError(EdmriError, ValueError):
    pass


class GeometryError(EdmriError, ValueError):
    pass


class FormatError(EdmriError, ValueError):
    """Malformed file contents (header, CSV schema, value types)."""


class SizeMismatchError(FormatError):
    pass


class UnsupportedFormatError(FormatError):
    pass


class ImputationError(EdmriError, ValueError):
    pass


class DegenerateInputError(EdmriError, ValueError):
    """Input has no usable variation, e.g. constant volume or single-class labels."""


class DivergenceError(EdmriError, RuntimeError):
    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training diverged (non-finite loss) at epoch {epoch}")


class ConfigurationError(EdmriError, ValueError):
    pass


class LeakageError(EdmriError, AssertionError):
    """Outer-test indices appeared inside a model-selection loop."""
