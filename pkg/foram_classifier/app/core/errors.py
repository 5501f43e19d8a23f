"""Exception hierarchy shared by services and commands.

Validation problems derive from ``ValueError`` and map to exit code 1;
runtime failures derive from ``RuntimeError`` and map to exit code 2.
"""

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class ForamError(Exception):
    """Base class for every error raised on purpose by this package."""

    exit_code = EXIT_RUNTIME


class ValidationError(ForamError, ValueError):
    exit_code = EXIT_VALIDATION


class ConfigError(ValidationError):
    """Config file does not match the schema.

    ``keys`` holds the dotted paths of every offending key.
    """

    def __init__(self, message: str, keys: list[str] | None = None):
        super().__init__(message)
        self.keys = keys or []


class ParameterError(ValidationError):
    pass


class DimensionError(ValidationError):
    pass


class StratificationError(ValidationError):
    pass


class ArtifactMissingError(ValidationError):
    pass


class ClassMismatchError(ValidationError):
    pass


class EmptySplitError(ValidationError):
    pass


class EmptyGridError(ValidationError):
    pass


class PipelineError(ForamError, RuntimeError):
    exit_code = EXIT_RUNTIME


class DegenerateHistogramError(PipelineError):
    pass


class PlacementError(PipelineError):
    pass


class NumericError(PipelineError):
    pass


class TrainingDivergedError(PipelineError):
    pass


class ModelLoadError(PipelineError):
    pass


class ShapeError(PipelineError):
    pass


class UnsupportedOperationError(PipelineError):
    pass
