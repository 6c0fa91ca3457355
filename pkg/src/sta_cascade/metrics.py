"""Top-5 mAP in four match modes: noun, noun+verb, noun+ttc, and all three."""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .core import AnticipationPrediction, EvaluationError, StaAnnotation, Target, iou
from .inference import FramePredictions

IOU_THRESHOLD = 0.5
TTC_TOLERANCE = 0.25
TOP_N = 5


class MetricMode(str, enum.Enum):
    NOUN = "noun"
    NOUN_VERB = "noun_verb"
    NOUN_TTC = "noun_ttc"
    OVERALL = "overall"

    @property
    def label(self) -> str:
        return {"noun": "Noun", "noun_verb": "N+V", "noun_ttc": "N+TTC", "overall": "Overall"}[self.value]


def match_predicate(pred: AnticipationPrediction, gt: Target, mode: MetricMode,
                    iou_threshold: float = IOU_THRESHOLD, ttc_tolerance: float = TTC_TOLERANCE) -> bool:
    if pred.noun_id != gt.noun_id or iou(pred.box, gt.box) < iou_threshold:
        return False
    if mode in (MetricMode.NOUN_VERB, MetricMode.OVERALL) and pred.verb_id != gt.verb_id:
        return False
    if mode in (MetricMode.NOUN_TTC, MetricMode.OVERALL) and abs(pred.ttc - gt.ttc) > ttc_tolerance:
        return False
    return True


def average_precision(tp: Sequence[bool], num_gt: int) -> float:
    """All-point interpolated AP from a score-ordered TP/FP sequence."""
    if num_gt == 0:
        return 0.0
    if len(tp) == 0:
        return 0.0
    hits = np.asarray(tp, dtype=np.float64)
    ctp = np.cumsum(hits)
    recall = ctp / num_gt
    precision = ctp / np.arange(1, len(hits) + 1)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    step = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[step + 1] - mrec[step]) * mpre[step + 1]))


def _as_frame_map(frames) -> Dict[str, List[AnticipationPrediction]]:
    if isinstance(frames, Mapping):
        items = frames.items()
    else:
        items = ((f.frame_id, f) for f in frames)
    out = {}
    for frame_id, fp in items:
        preds = fp.predictions if isinstance(fp, FramePredictions) else list(fp)
        out[frame_id] = preds
    return out


def _noun_tp_flags(all_frame_predictions, all_annotations: Mapping[str, StaAnnotation],
                   mode: MetricMode, iou_threshold: float, ttc_tolerance: float,
                   top_n: int) -> Tuple[Dict[int, List[Tuple[float, bool]]], Dict[int, int]]:
    preds_by_frame = _as_frame_map(all_frame_predictions)
    for frame_id in preds_by_frame:
        if frame_id not in all_annotations:
            raise EvaluationError(f"predictions reference frame {frame_id!r} absent from annotations")

    num_gt: Dict[int, int] = defaultdict(int)
    for ann in all_annotations.values():
        for t in ann.targets:
            num_gt[t.noun_id] += 1

    # (score, frame order, rank) keeps pooled ordering deterministic on ties
    pooled: Dict[int, list] = defaultdict(list)
    frame_order = {fid: n for n, fid in enumerate(all_annotations)}
    for frame_id, preds in preds_by_frame.items():
        kept = sorted(preds, key=lambda p: -p.score)[:top_n]
        for rank, p in enumerate(kept):
            pooled[p.noun_id].append((-p.score, frame_order[frame_id], rank, frame_id, p))

    flags: Dict[int, List[Tuple[float, bool]]] = {}
    for noun in num_gt:
        claimed = set()
        seq = []
        for neg_score, _, _, frame_id, p in sorted(pooled.get(noun, []), key=lambda e: e[:3]):
            targets = all_annotations[frame_id].targets
            # each prediction is tied to its best-overlapping same-noun target, independent of mode
            best, best_iou = None, -1.0
            for g, t in enumerate(targets):
                if t.noun_id != noun:
                    continue
                overlap = iou(p.box, t.box)
                if overlap > best_iou:
                    best, best_iou = g, overlap
            hit = (best is not None and (frame_id, best) not in claimed
                   and match_predicate(p, targets[best], mode, iou_threshold, ttc_tolerance))
            if hit:
                claimed.add((frame_id, best))
            seq.append((-neg_score, hit))
        flags[noun] = seq
    return flags, dict(num_gt)


def per_noun_ap(all_frame_predictions, all_annotations, mode: MetricMode,
                iou_threshold: float = IOU_THRESHOLD, ttc_tolerance: float = TTC_TOLERANCE,
                top_n: int = TOP_N) -> Dict[int, float]:
    flags, num_gt = _noun_tp_flags(all_frame_predictions, all_annotations, mode,
                                   iou_threshold, ttc_tolerance, top_n)
    return {noun: average_precision([h for _, h in flags[noun]], num_gt[noun])
            for noun in sorted(num_gt)}


def top5_map(all_frame_predictions, all_annotations: Mapping[str, StaAnnotation], mode: MetricMode,
             iou_threshold: float = IOU_THRESHOLD, ttc_tolerance: float = TTC_TOLERANCE,
             top_n: int = TOP_N) -> float:
    aps = per_noun_ap(all_frame_predictions, all_annotations, mode, iou_threshold, ttc_tolerance, top_n)
    if not aps:
        return 0.0
    return float(np.mean(list(aps.values())))


@dataclass
class EvalReport:
    mAP: Dict[MetricMode, float]
    per_noun: Dict[MetricMode, Dict[int, float]] = field(default_factory=dict)
    num_frames: int = 0
    num_gt: int = 0
    checkpoint: str | None = None

    def to_dict(self) -> dict:
        return {
            "mAP": {m.value: v for m, v in self.mAP.items()},
            "per_noun_ap": {m.value: {str(n): ap for n, ap in d.items()} for m, d in self.per_noun.items()},
            "num_frames": self.num_frames,
            "num_gt": self.num_gt,
            "checkpoint": self.checkpoint,
        }

    def table(self) -> str:
        header = " | ".join(f"{m.label:>8}" for m in MetricMode)
        row = " | ".join(f"{100 * self.mAP[m]:8.2f}" for m in MetricMode)
        return f"Top-5 mAP (%)\n{header}\n{row}"


def evaluate_predictions(all_frame_predictions, all_annotations: Mapping[str, StaAnnotation],
                         iou_threshold: float = IOU_THRESHOLD, ttc_tolerance: float = TTC_TOLERANCE,
                         top_n: int = TOP_N) -> EvalReport:
    per_noun = {m: per_noun_ap(all_frame_predictions, all_annotations, m, iou_threshold,
                               ttc_tolerance, top_n) for m in MetricMode}
    maps = {m: (float(np.mean(list(d.values()))) if d else 0.0) for m, d in per_noun.items()}
    num_gt = sum(len(a.targets) for a in all_annotations.values())
    return EvalReport(mAP=maps, per_noun=per_noun, num_frames=len(all_annotations), num_gt=num_gt)
