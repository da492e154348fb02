"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ParseError(ValueError):
    """An input file violates its line format; carries a 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ValueError):
    """A run configuration or model/input kind mismatch."""


class TrainingError(RuntimeError):
    """Training produced a non-finite value or was otherwise aborted."""


class CheckpointError(RuntimeError):
    """A checkpoint file is missing fields, truncated, or version-incompatible."""


class StateError(RuntimeError):
    """A backward pass was requested without a cached forward pass."""


class GradientCheckError(RuntimeError):
    """The finite-difference check could not run (e.g. non-deterministic loss)."""
