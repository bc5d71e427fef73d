"""Exception taxonomy shared across the package."""


class ComodalError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ComodalError):
    """Invalid or inconsistent configuration."""


class DataError(ComodalError):
    """Malformed instances, datasets, or world files."""


class DimensionError(ComodalError):
    """Shape or dimension mismatch between tensors."""


class NumericError(ComodalError):
    """Non-finite values or degenerate numeric inputs (e.g. near-zero norms)."""


class CheckpointError(ComodalError):
    """Unreadable or corrupt checkpoint files."""


class TrainingDiverged(ComodalError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration
