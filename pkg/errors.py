"""
Exception hierarchy shared by the pipeline.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
TrainingDivergedError -> 4.
"""


class EcoTollError(Exception):
    """Base class for pipeline failures."""


class ConfigError(EcoTollError):
    pass


class DataError(EcoTollError):
    pass


class NetworkParseError(DataError):
    def __init__(self, path, line: int, reason: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {reason}")


class NetworkValidationError(DataError):
    pass


class EmbeddingLoadError(DataError):
    pass


class FeatureStatsError(DataError):
    pass


class UnknownSegmentError(DataError):
    def __init__(self, segment_id: str):
        self.segment_id = segment_id
        super().__init__(f"unknown segment id {segment_id!r}")


class TrainingDivergedError(EcoTollError):
    """Raised when the loss turns NaN/inf; `diagnostic` describes the offending batch."""

    def __init__(self, epoch: int, batch_index: int, diagnostic: dict):
        self.epoch = epoch
        self.batch_index = batch_index
        self.diagnostic = diagnostic
        super().__init__(f"loss diverged at epoch {epoch}, batch {batch_index}")


class ShapeError(ValueError):
    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        joined = ", ".join(str(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class DomainError(ValueError):
    pass
