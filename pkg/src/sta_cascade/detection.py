"""First-stage candidates: detector seam, fixture-backed stub and top-k selection."""

from __future__ import annotations

import json
from pathlib import Path
from types import MappingProxyType
from typing import Dict, Iterable, List, Mapping, Protocol, Sequence

from .core import BoundingBox, ConfigError, DataError, DetectionCandidate, MissingFrameError


class Detector(Protocol):
    """Anything that maps a frame id to raw, unpadded detection candidates.

    A real fine-tuned detector plugs in here by implementing ``detect``;
    its weights are never touched by training of the second stage.
    """

    def detect(self, frame_id: str) -> List[DetectionCandidate]: ...


class FixtureDetector:
    """Serves detections read from a fixture file. Immutable after load."""

    def __init__(self, detections: Mapping[str, Sequence[DetectionCandidate]]):
        self._store = MappingProxyType({k: tuple(v) for k, v in detections.items()})

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureDetector":
        return cls(load_detections(path))

    @property
    def frame_ids(self) -> List[str]:
        return list(self._store)

    def detect(self, frame_id: str) -> List[DetectionCandidate]:
        try:
            return list(self._store[frame_id])
        except KeyError:
            raise MissingFrameError(frame_id) from None


def select_top_k(candidates: Sequence[DetectionCandidate], k: int,
                 padding_index: int) -> List[DetectionCandidate]:
    """Keep the ``k`` highest-scoring candidates, padding the tail up to ``k``.

    Equal scores keep the detector's original order (``sorted`` is stable).
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}", "k")
    real = [c for c in candidates if not c.is_padding]
    ranked = sorted(real, key=lambda c: -c.det_score)[:k]
    ranked.extend(DetectionCandidate.padding(padding_index) for _ in range(k - len(ranked)))
    return ranked


def _parse_detection(raw: dict, where: str) -> DetectionCandidate:
    try:
        box = BoundingBox.from_list(raw["box"])
        return DetectionCandidate(box=box, noun_id=int(raw["noun_id"]), det_score=float(raw["score"]))
    except (KeyError, TypeError, ValueError, DataError) as exc:
        raise DataError(f"{where}: malformed detection ({exc})") from exc


def load_detections(path: str | Path) -> Dict[str, List[DetectionCandidate]]:
    """Read a JSON-lines detections file into ``frame_id -> candidates``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"detections file not found: {path}")
    out: Dict[str, List[DetectionCandidate]] = {}
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                record = json.loads(line)
                frame_id = record["frame_id"]
                dets = [_parse_detection(d, where) for d in record["detections"]]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{where}: malformed record ({exc})") from exc
            out[frame_id] = dets
    return out


def save_detections(path: str | Path, detections: Mapping[str, Iterable[DetectionCandidate]]) -> None:
    with Path(path).open("w") as fh:
        for frame_id, dets in detections.items():
            record = {
                "frame_id": frame_id,
                "detections": [
                    {"box": d.box.as_list(), "noun_id": d.noun_id, "score": d.det_score}
                    for d in dets if not d.is_padding
                ],
            }
            fh.write(json.dumps(record) + "\n")
