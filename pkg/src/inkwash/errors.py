"""Exception types shared across the toolkit."""


class InkwashError(Exception):
    """Base class for all toolkit errors."""


class InvalidInput(InkwashError):
    """Malformed image, mask or dataset passed to an operation."""


class InvalidConfig(InkwashError):
    """A configuration value is out of its legal range."""


class IncompleteManifest(InkwashError):
    """A manifest references tiles that are not available."""


class ArchitectureMismatch(InkwashError):
    """Built model violates its parameter-count budget."""


class DegenerateDataset(InkwashError):
    """Training data is missing a required class or is empty."""


class ModelNotReady(InkwashError):
    """Inference requested on a model without trained weights."""


class InvalidBox(InkwashError):
    """Bounding box is degenerate or outside the tile bounds."""


class InvalidState(InkwashError):
    """Tile status does not permit the requested operation."""


class ConfigError(InkwashError):
    """Pipeline configuration is unusable (missing/invalid checkpoints)."""


class UndefinedMetric(InkwashError):
    """Metric has no defined value for the given inputs (e.g. empty ground truth)."""
