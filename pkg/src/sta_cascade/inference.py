"""Turn head outputs and detection scores into ranked per-frame predictions."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

from .core import AnticipationPrediction, BoundingBox, ConfigError, DataError, DetectionCandidate
from .fusion import HeadOutputs


class NoPrediction(Exception):
    """Raised by ``final_prediction`` when a frame had no real detections."""


@dataclass
class FramePredictions:
    frame_id: str
    predictions: List[AnticipationPrediction] = field(default_factory=list)


def score_predictions(candidates: Sequence[DetectionCandidate], head_outputs: HeadOutputs, K: int,
                      frame_id: str = "", use_object_prob: bool = False) -> FramePredictions:
    """Score every (query, top-K verb) pair by detection score times verb probability.

    ``use_object_prob`` additionally multiplies in the next-active-object
    probability; it exists for ablations and is off by default.
    """
    p_int = head_outputs.p_int.detach()
    num_verbs = p_int.shape[-1]
    if K > num_verbs:
        raise ConfigError(f"top_verbs={K} exceeds the {num_verbs} verb classes", "top_verbs")
    if len(candidates) != p_int.shape[0]:
        raise ConfigError(f"{len(candidates)} candidates for {p_int.shape[0]} head rows")
    p_int = p_int.double().tolist()
    ttc = head_outputs.ttc.detach().double().tolist()
    p_obj = head_outputs.p_obj.detach().double().tolist()

    entries = []
    for i, cand in enumerate(candidates):
        if cand.is_padding:
            continue
        probs = p_int[i]
        # top-K by probability, lower verb index first on ties
        verbs = sorted(range(num_verbs), key=lambda j: (-probs[j], j))[:K]
        weight = cand.det_score * (p_obj[i] if use_object_prob else 1.0)
        for j in verbs:
            entries.append((weight * probs[j], i, j))
    entries.sort(key=lambda e: (-e[0], e[1], e[2]))
    preds = [
        AnticipationPrediction(box=candidates[i].box, noun_id=candidates[i].noun_id, verb_id=j,
                               ttc=ttc[i], score=s)
        for s, i, j in entries
    ]
    return FramePredictions(frame_id=frame_id, predictions=preds)


def final_prediction(frame_predictions: FramePredictions) -> AnticipationPrediction:
    if not frame_predictions.predictions:
        raise NoPrediction(frame_predictions.frame_id)
    return frame_predictions.predictions[0]


def prediction_to_dict(p: AnticipationPrediction) -> dict:
    return {"box": p.box.as_list(), "noun_id": p.noun_id, "verb_id": p.verb_id,
            "ttc": p.ttc, "score": p.score}


def save_predictions(path: str | Path, frames: Iterable[FramePredictions]) -> None:
    with Path(path).open("w") as fh:
        for fp in frames:
            record = {"frame_id": fp.frame_id,
                      "predictions": [prediction_to_dict(p) for p in fp.predictions]}
            fh.write(json.dumps(record) + "\n")


def load_predictions(path: str | Path) -> Dict[str, FramePredictions]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"predictions file not found: {path}")
    out: Dict[str, FramePredictions] = {}
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                preds = [
                    AnticipationPrediction(box=BoundingBox.from_list(p["box"]), noun_id=int(p["noun_id"]),
                                           verb_id=int(p["verb_id"]), ttc=float(p["ttc"]),
                                           score=float(p["score"]))
                    for p in record["predictions"]
                ]
                preds.sort(key=lambda p: -p.score)
                out[record["frame_id"]] = FramePredictions(record["frame_id"], preds)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: malformed prediction record ({exc})") from exc
    return out
