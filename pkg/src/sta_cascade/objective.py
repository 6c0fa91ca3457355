"""Target assignment and the weighted multi-task loss with per-layer supervision."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import torch

from .core import ConfigError, DetectionCandidate, ModelConfig, StaAnnotation, iou
from .fusion import HeadOutputs

EPS = 1e-7
MATCH_IOU = 0.5
SMOOTH_L1_BETA = 1.0


@dataclass
class TargetAssignment:
    obj_label: List[int]
    verb_label: List[int]  # -1 where unmatched
    ttc_target: List[float]  # 0.0 where unmatched; never read there
    loss_mask: List[bool]  # True for real (non-padding) queries

    @property
    def matched(self) -> List[bool]:
        return [v >= 0 for v in self.verb_label]


@dataclass
class LossBreakdown:
    loss_obj: torch.Tensor
    loss_int: torch.Tensor
    loss_ttc: torch.Tensor
    total: torch.Tensor
    per_layer_totals: List[torch.Tensor] = field(default_factory=list)

    def as_floats(self) -> dict:
        return {
            "loss_obj": self.loss_obj.item(),
            "loss_int": self.loss_int.item(),
            "loss_ttc": self.loss_ttc.item(),
            "total": self.total.item(),
            "per_layer_totals": [t.item() for t in self.per_layer_totals],
        }


def assign_targets(candidates: Sequence[DetectionCandidate], annotation: StaAnnotation,
                   iou_threshold: float = MATCH_IOU) -> TargetAssignment:
    """Greedy per-target matching on IoU among unmatched, noun-consistent candidates.

    Targets are processed in annotation order; for each, the best remaining
    candidate (highest IoU, earliest index on ties) with IoU >= threshold and
    the same noun becomes its positive.
    """
    k = len(candidates)
    obj = [0] * k
    verb = [-1] * k
    ttc = [0.0] * k
    mask = [not c.is_padding for c in candidates]
    for target in annotation.targets:
        best, best_iou = None, iou_threshold
        for i, cand in enumerate(candidates):
            if cand.is_padding or obj[i] or cand.noun_id != target.noun_id:
                continue
            overlap = iou(cand.box, target.box)
            if overlap >= best_iou and (best is None or overlap > best_iou):
                best, best_iou = i, overlap
        if best is not None:
            obj[best] = 1
            verb[best] = target.verb_id
            ttc[best] = target.ttc
    return TargetAssignment(obj, verb, ttc, mask)


def _masked_mean(values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    mask = mask.to(values.dtype)
    count = mask.sum()
    if count == 0:
        return values.sum() * 0.0
    return (values * mask).sum() / count


def loss_obj(p_obj: torch.Tensor, obj_label: torch.Tensor, loss_mask: torch.Tensor) -> torch.Tensor:
    p = p_obj.clamp(EPS, 1.0 - EPS)
    y = obj_label.to(p.dtype)
    bce = -(y * torch.log(p) + (1.0 - y) * torch.log1p(-p))
    return _masked_mean(bce, loss_mask)


def loss_int(p_int: torch.Tensor, verb_label: torch.Tensor) -> torch.Tensor:
    matched = verb_label >= 0
    index = verb_label.clamp(min=0).unsqueeze(-1)
    p_true = p_int.gather(-1, index).squeeze(-1).clamp(EPS, 1.0)
    return _masked_mean(-torch.log(p_true), matched)


def smooth_l1(x: torch.Tensor, beta: float = SMOOTH_L1_BETA) -> torch.Tensor:
    ax = x.abs()
    return torch.where(ax < beta, 0.5 * ax * ax / beta, ax - 0.5 * beta)


def loss_ttc(ttc: torch.Tensor, ttc_target: torch.Tensor, matched_mask: torch.Tensor,
             beta: float = SMOOTH_L1_BETA) -> torch.Tensor:
    return _masked_mean(smooth_l1(ttc - ttc_target.to(ttc.dtype), beta), matched_mask)


@dataclass
class TargetTensors:
    obj_label: torch.Tensor
    verb_label: torch.Tensor
    ttc_target: torch.Tensor
    loss_mask: torch.Tensor

    @classmethod
    def stack(cls, assignments: Sequence[TargetAssignment], dtype=torch.float32) -> "TargetTensors":
        return cls(
            obj_label=torch.tensor([a.obj_label for a in assignments], dtype=dtype),
            verb_label=torch.tensor([a.verb_label for a in assignments], dtype=torch.long),
            ttc_target=torch.tensor([a.ttc_target for a in assignments], dtype=dtype),
            loss_mask=torch.tensor([a.loss_mask for a in assignments], dtype=torch.bool),
        )


def layer_loss(out: HeadOutputs, targets: TargetTensors, config: ModelConfig):
    lo = loss_obj(out.p_obj, targets.obj_label, targets.loss_mask)
    li = loss_int(out.p_int, targets.verb_label)
    lt = loss_ttc(out.ttc, targets.ttc_target, targets.verb_label >= 0)
    total = config.lambda_obj * lo + config.lambda_int * li + config.lambda_ttc * lt
    return lo, li, lt, total


def total_loss(per_layer: Sequence[HeadOutputs], targets: TargetTensors | TargetAssignment,
               config: ModelConfig) -> LossBreakdown:
    """Weighted loss at every layer's heads, summed; component fields are the last layer's."""
    if not per_layer:
        raise ConfigError("total_loss needs at least one layer of head outputs", "num_layers")
    if isinstance(targets, TargetAssignment):
        targets = TargetTensors.stack([targets], dtype=per_layer[0].ttc.dtype)
        targets = TargetTensors(*(t.reshape(per_layer[0].ttc.shape) for t in
                                  (targets.obj_label, targets.verb_label, targets.ttc_target,
                                   targets.loss_mask)))
    totals = []
    for out in per_layer:
        lo, li, lt, tot = layer_loss(out, targets, config)
        totals.append(tot)
    return LossBreakdown(loss_obj=lo, loss_int=li, loss_ttc=lt, total=torch.stack(totals).sum(),
                         per_layer_totals=totals)
