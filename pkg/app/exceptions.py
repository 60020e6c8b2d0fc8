from typing import Optional, Sequence


class RobustnessError(Exception):
    """Base class for every error raised by the toolkit."""


class ShapeMismatchError(RobustnessError):
    def __init__(self, message: str, layer_index: Optional[int] = None,
                 expected: Optional[Sequence[int]] = None, actual: Optional[Sequence[int]] = None):
        self.message = message
        self.layer_index = layer_index
        self.expected = tuple(expected) if expected is not None else None
        self.actual = tuple(actual) if actual is not None else None
        detail = message
        if layer_index is not None:
            detail = f"layer {layer_index}: {detail}"
        if expected is not None or actual is not None:
            detail = f"{detail} (expected {self.expected}, got {self.actual})"
        super().__init__(detail)


class NonFiniteError(RobustnessError):
    def __init__(self, layer_index: int, stage: str = "forward"):
        self.layer_index = layer_index
        self.stage = stage
        super().__init__(f"non-finite values in {stage} pass at layer {layer_index}")


class LabelRangeError(RobustnessError):
    pass


class AttackError(RobustnessError):
    def __init__(self, message: str, iteration: Optional[int] = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)


class EvaluationError(RobustnessError):
    def __init__(self, message: str, sample_index: Optional[int] = None):
        self.sample_index = sample_index
        if sample_index is not None:
            message = f"sample {sample_index}: {message}"
        super().__init__(message)


class ConfigurationError(RobustnessError, ValueError):
    pass


class DatasetError(RobustnessError):
    pass


class DatasetFileMissingError(DatasetError):
    pass


class DatasetTruncatedError(DatasetError):
    pass


class DatasetLabelError(DatasetError):
    pass


class DatasetCountError(DatasetError):
    pass


class EmptyDatasetError(DatasetError):
    pass


class ModelFileError(RobustnessError):
    pass


class ModelVersionError(ModelFileError):
    pass


class ModelChecksumError(ModelFileError):
    pass


class ModelShapeError(ModelFileError):
    pass


class TrainingDivergedError(RobustnessError):
    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")


class ReportSchemaError(RobustnessError):
    pass
