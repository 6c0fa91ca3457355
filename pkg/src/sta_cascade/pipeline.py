"""Training, checkpointing, inference over a split, evaluation and plotting."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import torch
import yaml
from PIL import Image, ImageDraw

from .core import ConfigError, DetectionCandidate, EvaluationError, ModelConfig, NumericError
from .data import Dataset
from .detection import select_top_k
from .fusion import AnticipationModel, HeadOutputs
from .inference import FramePredictions, load_predictions, save_predictions, score_predictions
from .metrics import IOU_THRESHOLD, TTC_TOLERANCE, EvalReport, evaluate_predictions
from .objective import TargetTensors, assign_targets, total_loss

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 12
    batch_size: int = 32
    lr: float = 1e-4
    backbone_lr: float = 1e-5
    weight_decay: float = 1e-3
    lr_decay: float = 0.1
    decay_epoch: int = 11
    seed: int = 0
    max_steps: int | None = None

    def __post_init__(self):
        for name in ("epochs", "batch_size", "decay_epoch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1", name)
        for name in ("lr", "backbone_lr", "lr_decay"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive", name)
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0", "weight_decay")
        if self.decay_epoch > self.epochs:
            raise ConfigError(f"decay_epoch={self.decay_epoch} beyond epochs={self.epochs}", "decay_epoch")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1", "max_steps")


def load_config(path: str | Path | None, overrides: Mapping | None = None) -> Tuple[ModelConfig, TrainConfig]:
    """Read a flat YAML mapping whose keys are ModelConfig and TrainConfig fields."""
    values = {}
    if path is not None:
        try:
            values = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: expected a key-value mapping")
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    model_keys = {f.name for f in fields(ModelConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    unknown = set(values) - model_keys - train_keys
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        model = ModelConfig(**{k: v for k, v in values.items() if k in model_keys})
        train_cfg = TrainConfig(**{k: v for k, v in values.items() if k in train_keys})
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return model, train_cfg


def build_model(config: ModelConfig, seed: int = 0) -> AnticipationModel:
    torch.manual_seed(seed)
    return AnticipationModel(config)


# --------------------------------------------------------------------------
# batches

@dataclass
class PreparedSplit:
    frame_ids: List[str]
    candidates: List[List[DetectionCandidate]]
    boxes: torch.Tensor
    noun_ids: torch.Tensor
    padding_mask: torch.Tensor
    images: torch.Tensor
    targets: TargetTensors | None

    def __len__(self):
        return len(self.frame_ids)

    def batch(self, index: torch.Tensor | slice):
        targets = None
        if self.targets is not None:
            t = self.targets
            targets = TargetTensors(t.obj_label[index], t.verb_label[index], t.ttc_target[index],
                                    t.loss_mask[index])
        return self.boxes[index], self.noun_ids[index], self.padding_mask[index], self.images[index], targets


def prepare_split(dataset: Dataset, k: int, padding_index: int, with_targets: bool = True) -> PreparedSplit:
    """Top-k selection, padding and target assignment for every frame of a split."""
    cands, assignments = [], []
    for frame_id in dataset.frame_ids:
        top = select_top_k(dataset.detector.detect(frame_id), k, padding_index)
        cands.append(top)
        if with_targets:
            assignments.append(assign_targets(top, dataset.annotations[frame_id]))
    if not cands:
        raise EvaluationError(f"split {dataset.manifest.split!r} has no frames")
    return PreparedSplit(
        frame_ids=list(dataset.frame_ids),
        candidates=cands,
        boxes=torch.tensor([[c.box_coords() for c in row] for row in cands], dtype=torch.float32),
        noun_ids=torch.tensor([[c.noun_id for c in row] for row in cands], dtype=torch.long),
        padding_mask=torch.tensor([[c.is_padding for c in row] for row in cands], dtype=torch.bool),
        images=torch.stack([dataset.frames[f] for f in dataset.frame_ids]),
        targets=TargetTensors.stack(assignments) if with_targets else None,
    )


# --------------------------------------------------------------------------
# training

@dataclass
class RunRecord:
    model_config: dict
    train_config: dict
    epochs: List[dict] = field(default_factory=list)
    eval_reports: List[dict] = field(default_factory=list)
    checkpoints: List[str] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epochs[-1]["total"]

    def add_eval(self, report: EvalReport, checkpoint: str) -> None:
        if checkpoint not in self.checkpoints:
            self.checkpoints.append(checkpoint)
        report.checkpoint = checkpoint
        self.eval_reports.append(report.to_dict())

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def make_optimizer(model: AnticipationModel, config: TrainConfig):
    groups = []
    backbone = model.backbone_parameters()
    if backbone:
        groups.append({"params": backbone, "lr": config.backbone_lr, "name": "backbone"})
    groups.append({"params": model.other_parameters(), "lr": config.lr, "name": "model"})
    optimizer = torch.optim.AdamW(groups, lr=config.lr, weight_decay=config.weight_decay)
    scheduler = torch.optim.lr_scheduler.StepLR(optimizer, step_size=config.decay_epoch, gamma=config.lr_decay)
    return optimizer, scheduler


def train(model: AnticipationModel, dataset: Dataset, config: TrainConfig) -> RunRecord:
    """AdamW over two parameter groups with step decay; returns per-epoch loss aggregates."""
    torch.use_deterministic_algorithms(True)
    torch.manual_seed(config.seed)
    mc = model.config
    if len(dataset.manifest.nouns) != mc.num_nouns or len(dataset.manifest.verbs) != mc.num_verbs:
        raise ConfigError(
            f"dataset vocabulary ({len(dataset.manifest.nouns)} nouns, {len(dataset.manifest.verbs)} verbs) "
            f"does not match model config ({mc.num_nouns}, {mc.num_verbs})")
    prepared = prepare_split(dataset, mc.k_train, mc.padding_index)
    optimizer, scheduler = make_optimizer(model, config)
    generator = torch.Generator().manual_seed(config.seed)
    record = RunRecord(model_config=mc.to_dict(), train_config=asdict(config))

    steps = 0
    model.train()
    for epoch in range(config.epochs):
        lrs = {g["name"]: g["lr"] for g in optimizer.param_groups}
        sums = {"loss_obj": 0.0, "loss_int": 0.0, "loss_ttc": 0.0, "total": 0.0}
        batches = 0
        order = torch.randperm(len(prepared), generator=generator)
        for b, start in enumerate(range(0, len(prepared), config.batch_size)):
            index = order[start:start + config.batch_size]
            boxes, nouns, mask, images, targets = prepared.batch(index)
            out = model(boxes, nouns, mask, images)
            losses = total_loss(out.per_layer, targets, mc)
            if not torch.isfinite(losses.total):
                frames = [prepared.frame_ids[i] for i in index.tolist()]
                raise NumericError(f"non-finite loss at epoch {epoch} batch {b} (frames {frames[:4]}...)")
            optimizer.zero_grad()
            losses.total.backward()
            optimizer.step()
            for key, value in losses.as_floats().items():
                if key in sums:
                    sums[key] += value
            batches += 1
            steps += 1
            if config.max_steps is not None and steps >= config.max_steps:
                break
        scheduler.step()
        entry = {k: v / batches for k, v in sums.items()}
        entry.update(epoch=epoch, steps=steps, lr=lrs["model"], backbone_lr=lrs.get("backbone"))
        record.epochs.append(entry)
        log.info("epoch %d: total=%.4f obj=%.4f int=%.4f ttc=%.4f", epoch, entry["total"],
                 entry["loss_obj"], entry["loss_int"], entry["loss_ttc"])
        if config.max_steps is not None and steps >= config.max_steps:
            break
    model.eval()
    return record


# --------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path: str | Path, model: AnticipationModel, nouns: Sequence[str],
                    verbs: Sequence[str]) -> None:
    torch.save({
        "model_config": model.config.to_dict(),
        "state_dict": model.state_dict(),
        "nouns": list(nouns),
        "verbs": list(verbs),
    }, path)


def load_checkpoint(path: str | Path) -> Tuple[AnticipationModel, dict]:
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except (OSError, RuntimeError) as exc:
        raise EvaluationError(f"cannot load checkpoint {path}: {exc}") from exc
    model = AnticipationModel(ModelConfig.from_dict(blob["model_config"]))
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, {"nouns": blob["nouns"], "verbs": blob["verbs"]}


# --------------------------------------------------------------------------
# inference and evaluation

def _split_heads(out: HeadOutputs, n: int) -> HeadOutputs:
    return HeadOutputs(p_obj=out.p_obj[n], p_int=out.p_int[n], ttc=out.ttc[n])


@torch.no_grad()
def predict(model: AnticipationModel, dataset: Dataset, k_infer: int | None = None,
            top_verbs: int | None = None, batch_size: int = 64,
            use_object_prob: bool = False) -> List[FramePredictions]:
    mc = model.config
    k = k_infer or mc.k_infer
    K = top_verbs or mc.top_verbs
    model.eval()
    prepared = prepare_split(dataset, k, mc.padding_index, with_targets=False)
    frames = []
    for start in range(0, len(prepared), batch_size):
        index = slice(start, start + batch_size)
        boxes, nouns, mask, images, _ = prepared.batch(index)
        final = model(boxes, nouns, mask, images).final
        for n in range(boxes.shape[0]):
            i = start + n
            frames.append(score_predictions(prepared.candidates[i], _split_heads(final, n), K,
                                            frame_id=prepared.frame_ids[i],
                                            use_object_prob=use_object_prob))
    return frames


def check_vocabulary(meta: Mapping, dataset: Dataset) -> None:
    if list(meta["nouns"]) != dataset.manifest.nouns or list(meta["verbs"]) != dataset.manifest.verbs:
        raise EvaluationError("checkpoint vocabulary does not match the dataset vocabulary")


def evaluate(source, dataset: Dataset, k_infer: int | None = None, top_verbs: int | None = None,
             iou_threshold: float = IOU_THRESHOLD, ttc_tolerance: float = TTC_TOLERANCE) -> EvalReport:
    """Evaluate a model, a checkpoint path (``.pt``) or a predictions file in all four modes."""
    checkpoint = None
    if isinstance(source, AnticipationModel):
        frames = predict(source, dataset, k_infer, top_verbs)
    else:
        path = Path(source)
        if path.suffix == ".pt":
            model, meta = load_checkpoint(path)
            check_vocabulary(meta, dataset)
            frames = predict(model, dataset, k_infer, top_verbs)
            checkpoint = str(path)
        else:
            frames = list(load_predictions(path).values())
    report = evaluate_predictions(frames, dataset.annotations, iou_threshold, ttc_tolerance)
    report.checkpoint = checkpoint
    return report


def candidate_count_ablation(train_set: Dataset, eval_set: Dataset, model_config: ModelConfig,
                             train_config: TrainConfig, counts: Iterable[int] = (5, 10, 20),
                             ) -> Dict[int, EvalReport]:
    """Retrain with each number of training-time query candidates and evaluate."""
    reports = {}
    for k in counts:
        cfg = ModelConfig.from_dict({**model_config.to_dict(), "k_train": k})
        model = build_model(cfg, train_config.seed)
        train(model, train_set, train_config)
        reports[k] = evaluate(model, eval_set)
    return reports


# --------------------------------------------------------------------------
# visualization

def visualize(frame, frame_predictions: FramePredictions, output_path: str | Path | None = None,
              nouns: Sequence[str] | None = None, verbs: Sequence[str] | None = None,
              color=(255, 32, 32)) -> Image.Image:
    """Draw the top-scoring prediction on a frame (path or PIL image)."""
    if isinstance(frame, Image.Image):
        im = frame.convert("RGB")
    else:
        path = Path(frame)
        if not path.exists():
            raise FileNotFoundError(f"frame not found: {path}")
        with Image.open(path) as src:
            im = src.convert("RGB")
    if not frame_predictions.predictions:
        warnings.warn(f"no predictions for frame {frame_predictions.frame_id!r}; image left unmodified")
    else:
        top = frame_predictions.predictions[0]
        w, h = im.size
        x1, y1, x2, y2 = top.box.to_pixels(w, h)
        x1, y1 = min(max(x1, 0), w - 1), min(max(y1, 0), h - 1)
        x2, y2 = min(max(x2 - 1, x1), w - 1), min(max(y2 - 1, y1), h - 1)
        draw = ImageDraw.Draw(im)
        draw.rectangle([x1, y1, x2, y2], outline=color, width=max(1, round(min(w, h) / 100)))
        noun = nouns[top.noun_id] if nouns else str(top.noun_id)
        verb = verbs[top.verb_id] if verbs else str(top.verb_id)
        label = f"{verb} {noun} ttc={top.ttc:.2f}s s={top.score:.2f}"
        draw.text((x1 + 2, max(0, y1 - 11) if y1 >= 11 else y1 + 2), label, fill=color)
    if output_path is not None:
        im.save(output_path)
    return im


def run_dir_outputs(out_dir: str | Path) -> Dict[str, Path]:
    out = Path(out_dir)
    return {"checkpoint": out / "checkpoint.pt", "record": out / "run_record.json",
            "predictions": out / "predictions.jsonl", "report": out / "eval_report.json"}
