"""Exception hierarchy shared by all pipeline stages."""


class PSSFError(Exception):
    """Base class for every error raised by the toolkit."""


class InvalidGradeError(PSSFError, ValueError):
    pass


class GeometryOverflowError(PSSFError):
    pass


class ShapeError(PSSFError, ValueError):
    pass


class InvariantViolationError(PSSFError, ValueError):
    pass


class ParameterError(PSSFError, ValueError):
    pass


class SpecError(PSSFError, ValueError):
    pass


class DegenerateRoiError(PSSFError):
    pass


class DataError(PSSFError, ValueError):
    pass


class TrainingError(PSSFError):
    pass


class SchemaError(PSSFError, ValueError):
    pass


class SplitError(PSSFError):
    pass


class ScenarioError(PSSFError):
    pass


class MetricUndefinedError(PSSFError):
    pass


class ConfigError(PSSFError):
    pass


class StageError(PSSFError):
    """A pipeline stage failed; ``records`` names the offending inputs."""

    def __init__(self, stage, message, records=()):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.records = list(records)
