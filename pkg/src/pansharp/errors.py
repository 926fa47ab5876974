"""Exception types shared across the package."""


class PansharpError(Exception):
    """Base class for package-specific errors."""


class FormatError(PansharpError):
    """Raised when a container file has a bad magic, header, or payload."""


class ValidationError(PansharpError):
    """Raised when raster data violates its declared constraints."""


class DegenerateInputError(PansharpError):
    """Raised when a metric has no non-degenerate windows to evaluate."""


class TrainingDiverged(PansharpError):
    """Raised when a loss term turns NaN during training."""

    def __init__(self, term: str, iteration: int):
        self.term = term
        self.iteration = iteration
        super().__init__(f"loss term '{term}' is NaN at iteration {iteration}")
