"""Independent reference implementations used by several test modules."""

from __future__ import annotations

import itertools
import random

from sta_cascade.core import AnticipationPrediction, BoundingBox, StaAnnotation, Target, iou
from sta_cascade.inference import FramePredictions


def _area(b):
    return (b[2] - b[0]) * (b[3] - b[1])


def _iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter == 0:
        return 0.0
    return inter / (_area(a) + _area(b) - inter)


def _ok(p, g, mode, thr, tol):
    if p["noun"] != g["noun"] or _iou(p["box"], g["box"]) < thr:
        return False
    need_verb = mode in ("noun_verb", "overall")
    need_ttc = mode in ("noun_ttc", "overall")
    if need_verb and p["verb"] != g["verb"]:
        return False
    if need_ttc and abs(p["ttc"] - g["ttc"]) > tol:
        return False
    return True


def brute_force_map(preds: dict, anns: dict, mode: str, thr=0.5, tol=0.25, top_n=5) -> float:
    """Explicit TP/FP lists and a point-by-point PR curve.

    Works on plain dicts. For each noun the interpolated precision at every
    true positive is the best precision reached at that rank or any later
    one; AP is their sum divided by the number of ground-truth instances.
    """
    frame_rank = {f: i for i, f in enumerate(anns)}
    gts = {}
    for f, targets in anns.items():
        for gi, g in enumerate(targets):
            gts.setdefault(g["noun"], []).append((f, gi))
    aps = []
    for noun, instances in sorted(gts.items()):
        kept = []
        for f, plist in preds.items():
            order = sorted(range(len(plist)), key=lambda i: -plist[i]["score"])[:top_n]
            for r, i in enumerate(order):
                if plist[i]["noun"] == noun:
                    kept.append((plist[i]["score"], frame_rank[f], r, f, plist[i]))
        kept.sort(key=lambda e: (-e[0], e[1], e[2]))
        used = set()
        hits = []
        for _, _, _, f, p in kept:
            candidates = [(gi, g) for gi, g in enumerate(anns[f]) if g["noun"] == noun]
            hit = False
            if candidates:
                # best-overlap target; earliest index on equal overlap
                gi, g = max(candidates, key=lambda c: (_iou(p["box"], c[1]["box"]), -c[0]))
                if (f, gi) not in used and _ok(p, g, mode, thr, tol):
                    used.add((f, gi))
                    hit = True
            hits.append(hit)
        n = len(instances)
        precisions = []
        tp = 0
        for rank, h in enumerate(hits, 1):
            tp += h
            precisions.append(tp / rank)
        total = 0.0
        for rank, h in enumerate(hits):
            if h:
                total += max(precisions[rank:])
        aps.append(total / n)
    return sum(aps) / len(aps) if aps else 0.0


def _rand_box(rng):
    x1, y1 = rng.uniform(0, 0.6), rng.uniform(0, 0.6)
    return [round(x1, 3), round(y1, 3), round(x1 + rng.uniform(0.1, 0.4), 3), round(y1 + rng.uniform(0.1, 0.4), 3)]


def random_instance(rng: random.Random, max_frames=4, max_preds=6, max_nouns=3, num_verbs=3):
    """Small evaluation problem: predictions are jittered GT copies or random boxes."""
    anns, preds = {}, {}
    for n in range(rng.randint(1, max_frames)):
        f = f"f{n}"
        targets = [{"box": _rand_box(rng), "noun": rng.randrange(max_nouns), "verb": rng.randrange(num_verbs),
                    "ttc": round(rng.uniform(0.3, 2.0), 2)} for _ in range(rng.randint(1, 2))]
        anns[f] = targets
        plist = []
        for _ in range(rng.randint(0, max_preds)):
            if rng.random() < 0.6:
                g = rng.choice(targets)
                j = rng.choice([0.0, 0.02, 0.1])
                box = [min(1.0, max(0.0, c + rng.uniform(-j, j))) for c in g["box"]]
                if box[2] <= box[0] or box[3] <= box[1]:
                    box = list(g["box"])
                noun = g["noun"] if rng.random() < 0.85 else rng.randrange(max_nouns)
                verb = g["verb"] if rng.random() < 0.6 else rng.randrange(num_verbs)
                ttc = max(0.05, g["ttc"] + rng.choice([0.0, 0.1, 0.25, 0.3, -0.5]))
            else:
                box, noun, verb = _rand_box(rng), rng.randrange(max_nouns), rng.randrange(num_verbs)
                ttc = round(rng.uniform(0.3, 2.0), 2)
            plist.append({"box": box, "noun": noun, "verb": verb, "ttc": ttc,
                          "score": rng.choice([round(rng.random(), 2), 0.5])})
        preds[f] = plist
    return preds, anns


def to_domain(preds: dict, anns: dict):
    annotations = {
        f: StaAnnotation(f, tuple(Target(BoundingBox(*g["box"]), g["noun"], g["verb"], g["ttc"]) for g in targets))
        for f, targets in anns.items()
    }
    frames = [
        FramePredictions(f, [AnticipationPrediction(BoundingBox(*p["box"]), p["noun"], p["verb"], p["ttc"],
                                                    p["score"]) for p in plist])
        for f, plist in preds.items()
    ]
    return frames, annotations


def brute_force_assignment(candidates, annotation, threshold=0.5):
    """Enumerate every injective partial map target -> candidate and keep the best one.

    Maps are ranked lexicographically per target in annotation order: a matched
    target beats an unmatched one, higher IoU beats lower, and the earlier
    candidate index wins exact ties.
    """
    targets = annotation.targets
    options = []
    for t in targets:
        ok = [i for i, c in enumerate(candidates)
              if not c.is_padding and c.noun_id == t.noun_id and iou(c.box, t.box) >= threshold]
        options.append([None] + ok)
    best_key, best_map = None, None
    for choice in itertools.product(*options):
        used = [c for c in choice if c is not None]
        if len(used) != len(set(used)):
            continue
        key = []
        for t, c in zip(targets, choice):
            key.extend([0, 0.0, 0] if c is None else [1, iou(candidates[c].box, t.box), -c])
        if best_key is None or key > best_key:
            best_key, best_map = key, choice
    k = len(candidates)
    obj, verb, ttc = [0] * k, [-1] * k, [0.0] * k
    for t, c in zip(targets, best_map):
        if c is not None:
            obj[c], verb[c], ttc[c] = 1, t.verb_id, t.ttc
    return obj, verb, ttc


def brute_force_scores(candidates, p_int, K):
    """All (query, verb) products for the top-K verbs, sorted by score then indices."""
    rows = []
    for i, c in enumerate(candidates):
        if c.is_padding:
            continue
        ranked = sorted(range(len(p_int[i])), key=lambda j: (-p_int[i][j], j))[:K]
        for j in ranked:
            rows.append((c.det_score * p_int[i][j], i, j))
    rows.sort(key=lambda r: (-r[0], r[1], r[2]))
    return rows
