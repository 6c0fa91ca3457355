"""Cascaded short-term object interaction anticipation.

Detected candidate objects become transformer queries alongside visual
tokens of the last frame; heads predict next-active-object probability,
interaction verb and time-to-contact.
"""

from .core import (AnticipationPrediction, BoundingBox, ConfigError, DataError, DetectionCandidate,
                   EvaluationError, MissingFrameError, ModelConfig, NumericError, ShapeError,
                   StaAnnotation, Target, iou)
from .fusion import AnticipationModel
from .metrics import MetricMode, top5_map
from .pipeline import TrainConfig

__version__ = "0.1.0"
