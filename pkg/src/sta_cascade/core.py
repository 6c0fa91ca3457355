"""Domain types, configuration and box geometry shared across the cascade."""

from __future__ import annotations

from dataclasses import dataclass, asdict, fields
from typing import List, Sequence, Tuple


class StaError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(StaError, ValueError):
    def __init__(self, message: str, field_name: str | None = None):
        super().__init__(message)
        self.field_name = field_name


class ShapeError(StaError, ValueError):
    pass


class DataError(StaError):
    pass


class MissingFrameError(DataError, KeyError):
    def __init__(self, frame_id: str):
        super().__init__(f"unknown frame_id: {frame_id!r}")
        self.frame_id = frame_id

    def __str__(self) -> str:  # KeyError quotes its args otherwise
        return self.args[0]


class EvaluationError(StaError):
    pass


class NumericError(StaError, FloatingPointError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in normalized image coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (0.0 <= self.x1 < self.x2 <= 1.0 and 0.0 <= self.y1 < self.y2 <= 1.0):
            raise DataError(f"invalid box {self.as_list()}")

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BoundingBox":
        if len(values) != 4:
            raise DataError(f"box needs 4 coordinates, got {len(values)}")
        return cls(*(float(v) for v in values))

    def as_list(self) -> List[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    @property
    def center(self) -> Tuple[float, float]:
        return 0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2)

    def to_pixels(self, width: int, height: int) -> Tuple[float, float, float, float]:
        return self.x1 * width, self.y1 * height, self.x2 * width, self.y2 * height


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(1.0, inter / union)


@dataclass(frozen=True)
class DetectionCandidate:
    """One potential active object proposed by the first stage.

    Padding entries carry ``box=None`` (the degenerate zero box is only
    materialized when tensors are built), ``noun_id`` equal to the padding
    index and a zero score.
    """

    box: BoundingBox | None
    noun_id: int
    det_score: float
    is_padding: bool = False

    def __post_init__(self):
        if not 0.0 <= self.det_score <= 1.0:
            raise DataError(f"detection score {self.det_score} outside [0, 1]")
        if self.is_padding:
            if self.det_score != 0.0:
                raise DataError("padding candidates must have score 0")
        elif self.box is None:
            raise DataError("real candidates need a box")

    @classmethod
    def padding(cls, padding_index: int) -> "DetectionCandidate":
        return cls(box=None, noun_id=padding_index, det_score=0.0, is_padding=True)

    def box_coords(self) -> List[float]:
        return [0.0, 0.0, 0.0, 0.0] if self.box is None else self.box.as_list()


@dataclass(frozen=True)
class Target:
    box: BoundingBox
    noun_id: int
    verb_id: int
    ttc: float

    def __post_init__(self):
        if not self.ttc > 0.0:
            raise DataError(f"ttc must be positive, got {self.ttc}")
        if self.noun_id < 0 or self.verb_id < 0:
            raise DataError("negative category index")


@dataclass(frozen=True)
class StaAnnotation:
    frame_id: str
    targets: Tuple[Target, ...]

    def validate(self, num_nouns: int, num_verbs: int) -> None:
        for t in self.targets:
            if t.noun_id >= num_nouns or t.verb_id >= num_verbs:
                raise DataError(f"{self.frame_id}: category index out of range")


@dataclass(frozen=True)
class AnticipationPrediction:
    box: BoundingBox
    noun_id: int
    verb_id: int
    ttc: float
    score: float

    def __post_init__(self):
        if not self.ttc > 0.0:
            raise DataError(f"predicted ttc must be positive, got {self.ttc}")
        if not self.score >= 0.0:
            raise DataError(f"score must be non-negative, got {self.score}")


@dataclass
class ModelConfig:
    d: int = 256
    k_train: int = 10
    k_infer: int = 20
    top_verbs: int = 6
    num_layers: int = 3
    num_heads: int = 8
    ff_mult: int = 4
    dropout: float = 0.1
    num_nouns: int = 8
    num_verbs: int = 4
    lambda_obj: float = 2.0
    lambda_int: float = 2.0
    lambda_ttc: float = 1.0
    image_size: int = 336
    grid: int = 8
    # None: backbone features are the raw flattened patches
    backbone_dim: int | None = None
    ttc_hidden: int | None = None

    def __post_init__(self):
        self.validate()

    @property
    def num_tokens(self) -> int:
        return self.grid * self.grid

    @property
    def padding_index(self) -> int:
        return self.num_nouns

    def validate(self) -> None:
        positive = ("d", "num_layers", "num_heads", "ff_mult", "num_nouns", "num_verbs",
                    "image_size", "grid")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}", name)
        for name in ("k_train", "k_infer", "top_verbs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}", name)
        if self.d % self.num_heads:
            raise ConfigError(f"d={self.d} not divisible by num_heads={self.num_heads}", "num_heads")
        for name in ("lambda_obj", "lambda_int", "lambda_ttc"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}", name)
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}", "dropout")
        if self.image_size % self.grid:
            raise ConfigError(f"image_size={self.image_size} not divisible by grid={self.grid}", "grid")
        for name in ("backbone_dim", "ttc_hidden"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}", name)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})
