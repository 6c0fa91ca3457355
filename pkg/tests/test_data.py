import hashlib
import json
import math

import pytest
import torch

from sta_cascade.core import AnticipationPrediction, BoundingBox, DataError, StaAnnotation, Target
from sta_cascade.data import (DEFAULT_COLORS, DatasetManifest, SyntheticSceneSpec, generate_synthetic,
                              load_annotations, load_dataset, load_frame, open_split, save_annotations,
                              write_vocabulary)
from sta_cascade.inference import FramePredictions
from sta_cascade.metrics import MetricMode, top5_map

NOUNS = ["cup", "knife", "door"]
VERBS = ["take", "cut", "open"]
SMALL = {"train": 12, "eval": 6}


def digest(root):
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(root)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def synthetic(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    spec = SyntheticSceneSpec(seed=0, splits=SMALL)
    generate_synthetic(spec, root)
    return spec, root


def write_fixture(root, lines):
    root.mkdir(parents=True, exist_ok=True)
    write_vocabulary(root / "nouns.txt", NOUNS)
    write_vocabulary(root / "verbs.txt", VERBS)
    path = root / "annotations.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in lines))
    return path


def test_two_frame_fixture(tmp_path):
    path = write_fixture(tmp_path, [
        {"frame_id": "a", "targets": [{"box": [0.1, 0.2, 0.3, 0.4], "noun": "knife", "verb": "cut", "ttc": 0.8}]},
        {"frame_id": "b", "targets": [{"box": [0.5, 0.5, 0.9, 0.9], "noun": "door", "verb": "open", "ttc": 2.0}]},
    ])
    anns = load_annotations(path, NOUNS, VERBS)
    assert list(anns) == ["a", "b"]
    assert anns["a"].targets[0] == Target(BoundingBox(0.1, 0.2, 0.3, 0.4), 1, 1, 0.8)
    assert anns["b"].targets[0].noun_id == 2 and anns["b"].targets[0].ttc == 2.0


def test_unknown_noun_names_noun_and_line(tmp_path):
    path = write_fixture(tmp_path, [
        {"frame_id": "a", "targets": []},
        {"frame_id": "b", "targets": [{"box": [0.1, 0.1, 0.2, 0.2], "noun": "spoon", "verb": "take", "ttc": 1}]},
    ])
    with pytest.raises(DataError, match=r"annotations.jsonl:2.*'spoon'"):
        load_annotations(path, NOUNS, VERBS)


@pytest.mark.parametrize("record", [
    "not json",
    json.dumps({"targets": []}),
    json.dumps({"frame_id": "a", "targets": [{"box": [0.1, 0.1, 0.2], "noun": "cup", "verb": "take", "ttc": 1}]}),
    json.dumps({"frame_id": "a", "targets": [{"box": [0.1, 0.1, 0.2, 0.2], "noun": "cup", "verb": "take",
                                              "ttc": -1}]}),
])
def test_malformed_records(tmp_path, record):
    path = tmp_path / "annotations.jsonl"
    path.write_text(record + "\n")
    with pytest.raises(DataError, match=":1"):
        load_annotations(path, NOUNS, VERBS)


def test_missing_files(tmp_path):
    with pytest.raises(DataError):
        load_annotations(tmp_path / "nope.jsonl", NOUNS, VERBS)
    with pytest.raises(DataError):
        DatasetManifest.from_root(tmp_path, "train")


def test_annotation_round_trip(tmp_path):
    anns = {
        "x": StaAnnotation("x", (Target(BoundingBox(0.125, 0.3, 0.6, 0.95), 0, 2, 1.3333),
                                 Target(BoundingBox(0.0, 0.0, 1.0, 1.0), 2, 0, 0.01))),
        "y": StaAnnotation("y", ()),
    }
    path = tmp_path / "annotations.jsonl"
    save_annotations(path, anns, NOUNS, VERBS)
    assert load_annotations(path, NOUNS, VERBS) == anns


def test_load_frame_range_and_resize(tmp_path):
    from PIL import Image
    Image.new("RGB", (10, 6), (255, 0, 51)).save(tmp_path / "f.png")
    img = load_frame(tmp_path / "f.png")
    assert img.shape == (3, 6, 10)
    assert torch.allclose(img[:, 0, 0], torch.tensor([1.0, 0.0, 0.2]))
    assert load_frame(tmp_path / "f.png", 8).shape == (3, 8, 8)
    (tmp_path / "bad.png").write_bytes(b"nope")
    with pytest.raises(DataError):
        load_frame(tmp_path / "bad.png")


def test_generation_is_deterministic(tmp_path, synthetic):
    spec, root = synthetic
    generate_synthetic(SyntheticSceneSpec(seed=0, splits=SMALL), tmp_path / "again")
    assert digest(tmp_path / "again") == digest(root)
    generate_synthetic(SyntheticSceneSpec(seed=1, splits=SMALL), tmp_path / "other")
    assert digest(tmp_path / "other") != digest(root)


def test_generated_vocabulary_and_layout(synthetic):
    spec, root = synthetic
    nouns = (root / "nouns.txt").read_text().split()
    assert len(nouns) == len(spec.shapes) * len(spec.colors) == 8
    assert (root / "verbs.txt").read_text().split() == list(spec.verbs)
    for split, count in SMALL.items():
        ds = open_split(root, split, spec.image_size)
        assert len(ds) == count
        assert all(f.shape == (3, spec.image_size, spec.image_size) for f in ds.frames.values())


def test_rules_recomputed_independently(synthetic):
    spec, root = synthetic
    ds = open_split(root, "train")
    colors = list(DEFAULT_COLORS.values())
    for frame_id, ann in ds.annotations.items():
        (t,) = ann.targets
        b = t.box
        # verb: horizontal half picks bit 0, vertical half picks bit 1
        right = (b.x1 + b.x2) / 2 >= 0.5
        lower = (b.y1 + b.y2) / 2 >= 0.5
        assert t.verb_id == {(False, False): 0, (True, False): 1, (False, True): 2, (True, True): 3}[(right, lower)]
        side = math.sqrt((b.x2 - b.x1) * (b.y2 - b.y1))
        assert t.ttc == pytest.approx(0.25 + 2.5 * (1 - side), abs=1e-4)
        # the active object is the highest-confidence, largest true detection
        dets = ds.detector.detect(frame_id)
        top = max(dets, key=lambda c: c.det_score)
        assert top.box == b and top.noun_id == t.noun_id
        # rendered in the color of its noun at its center
        px = ds.frames[frame_id][:, int((b.y1 + b.y2) / 2 * spec.image_size), int((b.x1 + b.x2) / 2 * spec.image_size)]
        expected = torch.tensor(colors[t.noun_id % len(colors)], dtype=torch.float32) / 255
        assert torch.allclose(px, expected, atol=1e-6)


def test_generated_annotation_invariants(synthetic):
    spec, root = synthetic
    for split in SMALL:
        ds = open_split(root, split)
        for ann in ds.annotations.values():
            ann.validate(8, 4)
            for t in ann.targets:
                assert t.ttc > 0 and 0 <= t.noun_id < 8 and 0 <= t.verb_id < 4


def test_oracle_detections_give_perfect_noun_map(synthetic):
    _, root = synthetic
    ds = open_split(root, "eval")
    preds = [FramePredictions(f, [AnticipationPrediction(c.box, c.noun_id, 0, 1.0, c.det_score)
                                  for c in ds.detector.detect(f)]) for f in ds.frame_ids]
    assert top5_map(preds, ds.annotations, MetricMode.NOUN) == 1.0


def test_missing_frame_image(tmp_path, synthetic):
    _, root = synthetic
    manifest = DatasetManifest.from_root(root, "eval")
    manifest.frame_ids = manifest.frame_ids + ["ghost"]
    with pytest.raises(DataError, match="ghost"):
        load_dataset(manifest)


def test_scene_settings_validation():
    with pytest.raises(DataError):
        SyntheticSceneSpec(verbs=("a", "b"))
    with pytest.raises(DataError):
        SyntheticSceneSpec.from_dict({"seed": 1, "bogus": 2})
    assert SyntheticSceneSpec.from_dict(SyntheticSceneSpec(seed=3).to_dict()) == SyntheticSceneSpec(seed=3)
