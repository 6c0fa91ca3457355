"""Annotation/frame loading and a seeded synthetic scene generator.

On-disk layout of a dataset root::

    nouns.txt, verbs.txt            newline-delimited vocabularies
    <split>/annotations.jsonl       one {"frame_id", "targets": [...]} per line
    <split>/detections.jsonl        first-stage candidates per frame
    <split>/frames/<frame_id>.png   last observed frame
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict, fields
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np
import torch
from PIL import Image, ImageDraw

from .core import BoundingBox, DataError, DetectionCandidate, StaAnnotation, Target, iou
from .detection import FixtureDetector, save_detections

ANNOTATIONS = "annotations.jsonl"
DETECTIONS = "detections.jsonl"
FRAMES = "frames"


def read_vocabulary(path: str | Path) -> List[str]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"vocabulary file not found: {path}")
    names = [line.strip() for line in path.read_text().splitlines() if line.strip()]
    if len(set(names)) != len(names):
        raise DataError(f"{path}: duplicate vocabulary entries")
    return names


def write_vocabulary(path: str | Path, names: Sequence[str]) -> None:
    Path(path).write_text("".join(f"{n}\n" for n in names))


@dataclass
class DatasetManifest:
    root: Path
    split: str
    frame_ids: List[str]
    nouns: List[str]
    verbs: List[str]

    @property
    def split_dir(self) -> Path:
        return self.root / self.split

    @property
    def annotations_path(self) -> Path:
        return self.split_dir / ANNOTATIONS

    @property
    def detections_path(self) -> Path:
        return self.split_dir / DETECTIONS

    def frame_path(self, frame_id: str) -> Path:
        return self.split_dir / FRAMES / f"{frame_id}.png"

    @classmethod
    def from_root(cls, root: str | Path, split: str) -> "DatasetManifest":
        root = Path(root)
        if not (root / split).is_dir():
            raise DataError(f"split directory not found: {root / split}")
        nouns = read_vocabulary(root / "nouns.txt")
        verbs = read_vocabulary(root / "verbs.txt")
        anns = load_annotations(root / split / ANNOTATIONS, nouns, verbs)
        return cls(root=root, split=split, frame_ids=list(anns), nouns=nouns, verbs=verbs)


def _parse_target(raw: dict, noun_index: Mapping[str, int], verb_index: Mapping[str, int],
                  where: str) -> Target:
    try:
        noun, verb = raw["noun"], raw["verb"]
        box, ttc = raw["box"], float(raw["ttc"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{where}: malformed target ({exc})") from exc
    if noun not in noun_index:
        raise DataError(f"{where}: noun {noun!r} not in vocabulary")
    if verb not in verb_index:
        raise DataError(f"{where}: verb {verb!r} not in vocabulary")
    try:
        return Target(box=BoundingBox.from_list(box), noun_id=noun_index[noun],
                      verb_id=verb_index[verb], ttc=ttc)
    except DataError as exc:
        raise DataError(f"{where}: {exc}") from exc


def load_annotations(path: str | Path, nouns: Sequence[str], verbs: Sequence[str]) -> Dict[str, StaAnnotation]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"annotations file not found: {path}")
    noun_index = {n: i for i, n in enumerate(nouns)}
    verb_index = {v: i for i, v in enumerate(verbs)}
    out: Dict[str, StaAnnotation] = {}
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                record = json.loads(line)
                frame_id, raw_targets = record["frame_id"], record["targets"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{where}: malformed record ({exc})") from exc
            targets = tuple(_parse_target(t, noun_index, verb_index, where) for t in raw_targets)
            if frame_id in out:
                raise DataError(f"{where}: duplicate frame_id {frame_id!r}")
            out[frame_id] = StaAnnotation(frame_id=frame_id, targets=targets)
    return out


def save_annotations(path: str | Path, annotations: Mapping[str, StaAnnotation] | Sequence[StaAnnotation],
                     nouns: Sequence[str], verbs: Sequence[str]) -> None:
    items = annotations.values() if isinstance(annotations, Mapping) else annotations
    with Path(path).open("w") as fh:
        for ann in items:
            record = {
                "frame_id": ann.frame_id,
                "targets": [{"box": t.box.as_list(), "noun": nouns[t.noun_id], "verb": verbs[t.verb_id],
                             "ttc": t.ttc} for t in ann.targets],
            }
            fh.write(json.dumps(record) + "\n")


def load_frame(path: str | Path, image_size: int | None = None) -> torch.Tensor:
    """Decode a PNG into a float tensor (3, H, W) in [0, 1], resized to a square if asked."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if image_size is not None and im.size != (image_size, image_size):
                im = im.resize((image_size, image_size), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode frame {path}: {exc}") from exc
    return torch.from_numpy(arr.copy()).permute(2, 0, 1).contiguous()


@dataclass
class Dataset:
    """A loaded split: annotations, decoded frames and its detector."""

    manifest: DatasetManifest
    annotations: Dict[str, StaAnnotation]
    frames: Dict[str, torch.Tensor]
    detector: FixtureDetector

    @property
    def frame_ids(self) -> List[str]:
        return self.manifest.frame_ids

    def __len__(self) -> int:
        return len(self.manifest.frame_ids)


def load_dataset(manifest: DatasetManifest, image_size: int | None = None) -> Dataset:
    anns = load_annotations(manifest.annotations_path, manifest.nouns, manifest.verbs)
    frames = {}
    for frame_id in manifest.frame_ids:
        path = manifest.frame_path(frame_id)
        if not path.exists():
            raise DataError(f"frame image missing for {frame_id!r}: {path}")
        frames[frame_id] = load_frame(path, image_size)
    detector = FixtureDetector.from_file(manifest.detections_path)
    missing = [f for f in manifest.frame_ids if f not in detector.frame_ids]
    if missing:
        raise DataError(f"{manifest.detections_path}: no detections entry for frames {missing[:5]}")
    for frame_id in manifest.frame_ids:
        for cand in detector.detect(frame_id):
            if cand.noun_id >= len(manifest.nouns):
                raise DataError(f"{manifest.detections_path}: {frame_id}: noun_id {cand.noun_id} out of range")
    return Dataset(manifest=manifest, annotations=anns, frames=frames, detector=detector)


def open_split(root: str | Path, split: str, image_size: int | None = None) -> Dataset:
    return load_dataset(DatasetManifest.from_root(root, split), image_size)


# --------------------------------------------------------------------------
# synthetic scenes

DEFAULT_COLORS = {
    "red": (220, 50, 47),
    "green": (60, 170, 60),
    "blue": (38, 110, 210),
    "yellow": (230, 200, 40),
}
QUADRANT_VERBS = ("take", "open", "put", "cut")


@dataclass
class SyntheticSceneSpec:
    """Everything that determines a synthetic dataset, seed included.

    Nouns are (color, shape) pairs. The next active object is the largest
    object in the frame; its verb is the quadrant holding its center
    (``2 * (cy >= split) + (cx >= split)``) and its time-to-contact is
    ``ttc_offset + ttc_scale * (1 - sqrt(w * h))``.
    """

    seed: int = 0
    image_size: int = 64
    splits: Dict[str, int] = field(default_factory=lambda: {"train": 64, "eval": 32})
    min_objects: int = 1
    max_objects: int = 3
    min_side: float = 0.12
    max_side: float = 0.42
    max_overlap: float = 0.2
    shapes: Tuple[str, ...] = ("rectangle", "ellipse")
    colors: Dict[str, Tuple[int, int, int]] = field(default_factory=lambda: dict(DEFAULT_COLORS))
    verbs: Tuple[str, ...] = QUADRANT_VERBS
    quadrant_split: float = 0.5
    # object centers keep at least this distance from the quadrant split lines
    quadrant_margin: float = 0.05
    ttc_offset: float = 0.25
    ttc_scale: float = 2.5
    active_score: Tuple[float, float] = (0.75, 0.99)
    passive_score: Tuple[float, float] = (0.2, 0.7)
    distractor_score: Tuple[float, float] = (0.02, 0.5)
    min_distractors: int = 0
    max_distractors: int = 3
    background: Tuple[int, int, int] = (128, 128, 128)
    noise: int = 12

    def __post_init__(self):
        self.shapes = tuple(self.shapes)
        self.verbs = tuple(self.verbs)
        self.colors = {k: tuple(v) for k, v in self.colors.items()}
        for name in ("active_score", "passive_score", "distractor_score", "background"):
            setattr(self, name, tuple(getattr(self, name)))
        if len(self.verbs) != 4:
            raise DataError("quadrant verb rule needs exactly 4 verbs")
        if not 1 <= self.min_objects <= self.max_objects:
            raise DataError("need 1 <= min_objects <= max_objects")
        if not 0 < self.min_side <= self.max_side < 1:
            raise DataError("need 0 < min_side <= max_side < 1")

    @property
    def nouns(self) -> List[str]:
        return [f"{color}_{shape}" for shape in self.shapes for color in self.colors]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Mapping) -> "SyntheticSceneSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise DataError(f"unknown synthetic spec keys: {sorted(unknown)}")
        return cls(**values)


def quadrant_verb(box: BoundingBox, split: float = 0.5) -> int:
    cx, cy = box.center
    return 2 * int(cy >= split) + int(cx >= split)


def area_ttc(box: BoundingBox, offset: float, scale: float) -> float:
    return offset + scale * (1.0 - math.sqrt(box.area))


def _round_box(rng: np.random.Generator, spec: SyntheticSceneSpec) -> BoundingBox:
    w, h = rng.uniform(spec.min_side, spec.max_side, size=2)
    x1 = rng.uniform(0.0, 1.0 - w)
    y1 = rng.uniform(0.0, 1.0 - h)
    return BoundingBox(*(round(float(v), 4) for v in (x1, y1, x1 + w, y1 + h)))


def _scene(rng: np.random.Generator, spec: SyntheticSceneSpec):
    count = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    objects: List[Tuple[BoundingBox, int]] = []
    attempts = 0
    while len(objects) < count and attempts < 500:
        attempts += 1
        box = _round_box(rng, spec)
        if any(abs(c - spec.quadrant_split) < spec.quadrant_margin for c in box.center):
            continue
        if any(iou(box, b) > spec.max_overlap for b, _ in objects):
            continue
        objects.append((box, int(rng.integers(len(spec.nouns)))))
    return objects


def _draw(objects, spec: SyntheticSceneSpec, rng: np.random.Generator) -> Image.Image:
    size = spec.image_size
    base = np.empty((size, size, 3), dtype=np.int16)
    base[:] = spec.background
    if spec.noise:
        base += rng.integers(-spec.noise, spec.noise + 1, size=base.shape, dtype=np.int16)
    im = Image.fromarray(np.clip(base, 0, 255).astype(np.uint8))
    draw = ImageDraw.Draw(im)
    colors = list(spec.colors.values())
    ncolors = len(colors)
    # largest drawn last so the active object is never occluded
    for box, noun in sorted(objects, key=lambda o: o[0].area):
        shape = spec.shapes[noun // ncolors]
        color = colors[noun % ncolors]
        x1, y1, x2, y2 = box.to_pixels(size, size)
        xy = [x1, y1, max(x1, x2 - 1), max(y1, y2 - 1)]
        if shape == "ellipse":
            draw.ellipse(xy, fill=color)
        else:
            draw.rectangle(xy, fill=color)
    return im


def generate_synthetic(spec: SyntheticSceneSpec, out_dir: str | Path) -> Dict[str, DatasetManifest]:
    """Write frames, annotations and oracle detections for every split."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nouns, verbs = spec.nouns, list(spec.verbs)
    write_vocabulary(out_dir / "nouns.txt", nouns)
    write_vocabulary(out_dir / "verbs.txt", verbs)
    (out_dir / "synthetic_spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")

    rng = np.random.default_rng(spec.seed)
    manifests = {}
    for split, count in spec.splits.items():
        split_dir = out_dir / split
        (split_dir / FRAMES).mkdir(parents=True, exist_ok=True)
        annotations, detections, frame_ids = [], {}, []
        for n in range(count):
            frame_id = f"{split}_{n:05d}"
            objects = _scene(rng, spec)
            active = max(range(len(objects)), key=lambda i: objects[i][0].area)
            box, noun = objects[active]
            target = Target(box=box, noun_id=noun, verb_id=quadrant_verb(box, spec.quadrant_split),
                            ttc=round(area_ttc(box, spec.ttc_offset, spec.ttc_scale), 4))
            annotations.append(StaAnnotation(frame_id=frame_id, targets=(target,)))

            dets = []
            for i, (b, c) in enumerate(objects):
                lo, hi = spec.active_score if i == active else spec.passive_score
                dets.append(DetectionCandidate(b, c, round(float(rng.uniform(lo, hi)), 4)))
            for _ in range(int(rng.integers(spec.min_distractors, spec.max_distractors + 1))):
                lo, hi = spec.distractor_score
                dets.append(DetectionCandidate(_round_box(rng, spec), int(rng.integers(len(nouns))),
                                               round(float(rng.uniform(lo, hi)), 4)))
            detections[frame_id] = [dets[i] for i in rng.permutation(len(dets))]

            _draw(objects, spec, rng).save(split_dir / FRAMES / f"{frame_id}.png", optimize=False)
            frame_ids.append(frame_id)
        save_annotations(split_dir / ANNOTATIONS, annotations, nouns, verbs)
        save_detections(split_dir / DETECTIONS, detections)
        manifests[split] = DatasetManifest(out_dir, split, frame_ids, nouns, verbs)
    return manifests
