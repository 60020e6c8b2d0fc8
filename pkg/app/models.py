import logging
from enum import Enum
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from .config import DEFAULT_EPSILON, DEFAULT_STEP_FRACTION
from .preprocessing import TransformKind

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1


class Norm(str, Enum):
    LINF = "linf"
    L2 = "l2"


class AttackSpace(str, Enum):
    INPUT = "input"
    NETWORK = "network"


def _fill_threat_defaults(data: dict) -> dict:
    data = dict(data)
    norm = Norm(data.get("norm") or Norm.LINF)
    data["norm"] = norm
    if data.get("epsilon") is None:
        data["epsilon"] = DEFAULT_EPSILON[norm.value]
    if data.get("alpha") is None:
        data["alpha"] = float(data["epsilon"]) * DEFAULT_STEP_FRACTION
    return data


class ThreatModel(BaseModel):
    """Attacker constraint set. Omitted epsilon/alpha default to the norm's budget and budget / 4."""

    model_config = {"frozen": True}

    norm: Norm = Norm.LINF
    epsilon: float = Field(ge=0, description="Perturbation budget; 0 means no perturbation is possible")
    alpha: float = Field(ge=0, description="Step size of iterative attacks")
    iterations: int = Field(default=1, ge=1)
    restarts: int = Field(default=0, ge=0, description="Random initializations; 0 starts from the clean input")
    space: AttackSpace = AttackSpace.INPUT

    @model_validator(mode="before")
    @classmethod
    def _defaults(cls, data):
        return _fill_threat_defaults(data) if isinstance(data, dict) else data

    @model_validator(mode="after")
    def _warn_large_step(self):
        if self.iterations > 1 and self.alpha > self.epsilon:
            logger.warning("Step size alpha=%g exceeds budget epsilon=%g", self.alpha, self.epsilon)
        return self


class EvalConfig(BaseModel):
    threat: ThreatModel
    attack_preset: str
    post_quantize: bool = False
    seed: int = Field(default=0, ge=0)
    batch_size: int = Field(default=128, ge=1)

    @field_validator("attack_preset")
    @classmethod
    def _known_preset(cls, value: str) -> str:
        from .attacks.presets import resolve_preset

        resolve_preset(value)
        return value

    @model_validator(mode="after")
    def _threat_matches_preset(self):
        from .attacks.presets import canonical_name, complete_threat, effective_preset, resolve_preset

        threat = complete_threat(self.attack_preset, self.threat)
        runs = effective_preset(self.attack_preset, threat)
        preset = resolve_preset(self.attack_preset)
        if runs != canonical_name(preset.algorithm, threat.norm, preset.iterations, preset.restarts):
            raise ValueError(f"threat model runs {runs}, not {self.attack_preset}")
        self.threat = threat
        return self

    @model_validator(mode="after")
    def _quantize_input_space_only(self):
        if self.post_quantize and self.threat.space is AttackSpace.NETWORK:
            raise ValueError("post_quantize is only defined for attacks in input space")
        return self


class EvalReport(BaseModel):
    schema_version: int = REPORT_SCHEMA_VERSION
    model_name: str
    label: str = Field(description="Row label in comparison tables, e.g. 'BIM-10 (l2)'")
    num_samples: int = Field(ge=1)
    num_attacked: int = Field(ge=0)
    clean_accuracy: float = Field(ge=0, le=1)
    robust_accuracy: float = Field(ge=0, le=1)
    attack_success_rate: Optional[float] = Field(
        default=None, ge=0, le=1, description="Share of initially-correct samples flipped by the attack")
    confusion: List[List[int]] = Field(description="Rows = true class, columns = predicted class")
    per_class_robust_accuracy: List[Optional[float]]
    misclassification_spread: List[Optional[float]] = Field(
        description="Normalized entropy of each class's off-diagonal row (0 = one target class, 1 = uniform)")
    prediction_sinks: List[float] = Field(description="Share of all misclassifications received by each class")
    top_sinks: List[int]
    class_names: Optional[List[str]] = None
    config: EvalConfig
    duration_seconds: float = Field(default=0.0, exclude=True)


class TrainConfig(BaseModel):
    epochs: int = Field(default=10, ge=1)
    batch_size: int = Field(default=64, ge=1)
    learning_rate: float = Field(default=0.01, ge=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    seed: int = Field(default=0, ge=0)
    init: Literal["he", "xavier"] = "he"
    lr_schedule: Literal["constant", "step", "cosine"] = "constant"
    decay_every: int = Field(default=10, ge=1, description="Epochs between step decays")
    decay_factor: float = Field(default=0.1, gt=0, le=1)

    @model_validator(mode="after")
    def _warn_frozen(self):
        if self.learning_rate == 0:
            logger.warning("learning_rate is 0: parameters will not change")
        return self


# --- run-config sections -------------------------------------------------

class DatasetSection(BaseModel):
    kind: Literal["cifar10", "synthetic"] = "cifar10"
    path: Optional[Path] = None
    split: Literal["train", "test"] = "test"
    limit: Optional[int] = Field(default=None, ge=1, description="Keep only the first N samples")
    n: int = Field(default=1000, ge=1)
    num_classes: int = Field(default=10, ge=2)
    shape: Tuple[int, int, int] = (3, 32, 32)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _path_exists(self):
        if self.kind == "cifar10":
            if self.path is None:
                raise ValueError("path is required for cifar10 datasets")
            if not self.path.exists():
                raise ValueError(f"path does not exist: {self.path}")
        return self


class TransformSection(BaseModel):
    kind: TransformKind = TransformKind.IDENTITY
    mean: Optional[List[float]] = None
    std: Optional[List[float]] = None
    fit: bool = Field(default=False, description="Estimate missing statistics from the training set")


class TrainSection(BaseModel):
    dataset: DatasetSection
    eval_dataset: Optional[DatasetSection] = None
    architecture: Literal["reference_cnn", "linear"] = "reference_cnn"
    transform: TransformSection = TransformSection()
    optimizer: TrainConfig = TrainConfig()
    model_path: Path
    dtype: Literal["float32", "float64"] = "float32"


class ModelEntry(BaseModel):
    name: str
    path: Path

    @field_validator("path")
    @classmethod
    def _exists(cls, value: Path) -> Path:
        if not value.exists():
            raise ValueError(f"model file does not exist: {value}")
        return value


class AttackSpec(BaseModel):
    preset: str
    norm: Optional[Norm] = None
    epsilon: Optional[float] = Field(default=None, ge=0)
    alpha: Optional[float] = Field(default=None, ge=0)
    iterations: Optional[int] = Field(default=None, ge=1)
    restarts: Optional[int] = Field(default=None, ge=0)
    space: AttackSpace = AttackSpace.INPUT
    post_quantize: bool = False
    label: Optional[str] = None

    @field_validator("preset")
    @classmethod
    def _known_preset(cls, value: str) -> str:
        from .attacks.presets import resolve_preset

        resolve_preset(value)
        return value


class EvaluateSection(BaseModel):
    dataset: DatasetSection
    models: List[ModelEntry] = Field(min_length=1)
    attacks: List[AttackSpec] = Field(min_length=1)
    batch_size: int = Field(default=128, ge=1)
    output_dir: Path
    dtype: Literal["float32", "float64"] = "float32"


class ReportSection(BaseModel):
    inputs: List[Path] = Field(min_length=1)
    output_dir: Path

    @field_validator("inputs")
    @classmethod
    def _inputs_exist(cls, value: List[Path]) -> List[Path]:
        missing = [str(p) for p in value if not p.exists()]
        if missing:
            raise ValueError(f"report inputs do not exist: {', '.join(missing)}")
        return value


class RunConfig(BaseModel):
    seed: int = Field(default=0, ge=0)
    train: Optional[TrainSection] = None
    evaluate: Optional[EvaluateSection] = None
    report: Optional[ReportSection] = None


# --- HTTP request bodies ---------------------------------------------------

class InspectRequest(BaseModel):
    path: Path


class EvaluateRequest(BaseModel):
    model_path: Path
    model_name: str = "model"
    dataset: DatasetSection
    attack: AttackSpec
    seed: int = Field(default=0, ge=0)
    batch_size: int = Field(default=128, ge=1)
    dtype: Literal["float32", "float64"] = "float32"
