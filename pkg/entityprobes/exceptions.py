"""
Custom exceptions for the entityprobes library.
"""


class ProbeBenchError(Exception):
    """Base exception for all probing-bench errors."""
    pass


class IngestError(ProbeBenchError):
    """Raised when an input file contains a malformed row."""

    def __init__(self, message, path=None, line_number=None):
        location = ""
        if path is not None:
            location = f"{path}:{line_number}: " if line_number is not None else f"{path}: "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line_number = line_number


class OntologyError(IngestError):
    """Raised when type rows or type assignments are inconsistent."""
    pass


class EmbeddingError(ProbeBenchError):
    """Raised when embedding files or vectors are invalid."""
    pass


class PopularityError(ProbeBenchError):
    """Raised when popularity counts are invalid or the prior is undefined."""
    pass


class TaskGenerationError(ProbeBenchError):
    """Raised when a probing task cannot be generated with the required balance."""

    def __init__(self, message, counts=None):
        super().__init__(message)
        self.counts = dict(counts or {})


class CorruptionError(TaskGenerationError):
    """Raised when no valid corrupted triple exists after all resample attempts."""
    pass


class TrainingError(ProbeBenchError):
    """Raised when probe or scorer training fails."""

    def __init__(self, message, epoch=None, loss=None):
        super().__init__(message)
        self.epoch = epoch
        self.loss = loss


class KindMismatchError(ProbeBenchError):
    """Raised when a model is applied to a dataset of the wrong kind."""
    pass


class ValidationError(ProbeBenchError):
    """Raised when configuration or command-line validation fails."""
    pass


class MissingArtifactError(ProbeBenchError):
    """Raised when a required input file or upstream artifact is missing."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path
