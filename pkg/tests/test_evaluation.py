import json
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from focaldet.evaluation import (ap_per_class, average_precision, map_eval, match_detections, recall_at)
from focaldet.structures import Detection, GroundTruth


def box_iou(a, b):
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def brute_ap(dets, gts, cls, thr):
    """Recompute the ranked TP count for every prefix from scratch, then take the precision envelope."""
    ranked = sorted([d for d in dets if d.class_id == cls], key=lambda d: -d.score)
    targets = [g for g in gts if g.class_id == cls and not g.ignore]
    ignores = [g for g in gts if g.ignore]
    points = []
    for k in range(1, len(ranked) + 1):
        taken = set()
        tp = fp = 0
        for d in ranked[:k]:
            best, best_iou = None, -1.0
            for j, g in enumerate(targets):
                if g.frame_id == d.frame_id and j not in taken:
                    v = box_iou(d.bbox, g.bbox)
                    if v > best_iou:
                        best, best_iou = j, v
            if best is not None and best_iou >= thr:
                taken.add(best)
                tp += 1
            elif any(g.frame_id == d.frame_id and box_iou(d.bbox, g.bbox) >= thr for g in ignores):
                continue
            else:
                fp += 1
        points.append((tp / len(targets), tp / max(1, tp + fp)))
    ap, prev = 0.0, 0.0
    for i, (r, _) in enumerate(points):
        ap += (r - prev) * max(p for _, p in points[i:])
        prev = r
    return ap


def random_instance(rng):
    frames = rng.randint(1, 3)
    gts, dets = [], []
    for f in range(frames):
        for _ in range(rng.randint(0, 4)):
            x, y, w, h = rng.uniform(0, 60), rng.uniform(0, 60), rng.uniform(5, 30), rng.uniform(5, 30)
            gts.append(GroundTruth(f, rng.randint(0, 1), (x, y, x + w, y + h), ignore=rng.random() < 0.1))
    for _ in range(rng.randint(0, 12)):
        f = rng.randint(0, frames - 1)
        anchors = [g for g in gts if g.frame_id == f]
        if anchors and rng.random() < 0.7:
            g = rng.choice(anchors)
            j = [v + rng.uniform(-4, 4) for v in g.bbox]
            box = (min(j[0], j[2]), min(j[1], j[3]), max(j[0], j[2]), max(j[1], j[3]))
        else:
            x, y = rng.uniform(0, 60), rng.uniform(0, 60)
            box = (x, y, x + rng.uniform(5, 30), y + rng.uniform(5, 30))
        dets.append(Detection(f, rng.randint(0, 1), box, round(rng.random(), 2)))
    return dets, gts


@pytest.mark.parametrize("thr", [0.5, 0.7])
def test_map_matches_brute_force(thr):
    rng = random.Random(1234)
    for _ in range(150):
        dets, gts = random_instance(rng)
        result = map_eval(dets, gts, [0, 1], thr)
        for c, curve in result.per_class.items():
            assert curve.ap == pytest.approx(brute_ap(dets, gts, c, thr), abs=1e-12)


def test_voc_style_hand_example():
    gts = [GroundTruth(0, 0, (0, 0, 10, 10)), GroundTruth(0, 0, (20, 20, 30, 30))]
    dets = [Detection(0, 0, (0, 0, 10, 10), 0.9),      # TP
            Detection(0, 0, (50, 50, 60, 60), 0.8),    # FP
            Detection(0, 0, (20, 20, 30, 30), 0.7)]    # TP
    # ranked P/R: (0.5, 1), (0.5, 0.5), (1.0, 2/3) -> AP = 0.5 * 1 + 0.5 * 2/3
    assert ap_per_class(dets, gts, 0, 0.5).ap == pytest.approx(0.5 + 1 / 3)


def test_duplicate_detection_is_false_positive():
    gts = [GroundTruth(0, 0, (0, 0, 10, 10))]
    dets = [Detection(0, 0, (0, 0, 10, 10), 0.9), Detection(0, 0, (0, 0, 10, 10), 0.8)]
    _, tp, n = match_detections(dets, gts, 0, 0.5)
    assert tp.tolist() == [True, False] and n == 1
    assert ap_per_class(dets, gts, 0, 0.5).ap == 1.0


def test_detection_on_other_frame_never_matches():
    gts = [GroundTruth(1, 0, (0, 0, 10, 10))]
    dets = [Detection(2, 0, (0, 0, 10, 10), 0.9)]
    assert ap_per_class(dets, gts, 0, 0.5).ap == 0.0


def test_ignore_region_swallows_detection():
    gts = [GroundTruth(0, 0, (0, 0, 10, 10)), GroundTruth(0, -1, (100, 100, 200, 200), ignore=True)]
    dets = [Detection(0, 0, (100, 100, 200, 200), 0.95), Detection(0, 0, (0, 0, 10, 10), 0.5)]
    scores, tp, _ = match_detections(dets, gts, 0, 0.5)
    assert scores.tolist() == [0.5] and tp.tolist() == [True]
    assert ap_per_class(dets, gts, 0, 0.5).ap == 1.0


def test_threshold_is_inclusive():
    gts = [GroundTruth(0, 0, (0, 0, 10, 10))]
    dets = [Detection(0, 0, (0, 0, 10, 5), 1.0)]  # IoU exactly 0.5
    assert ap_per_class(dets, gts, 0, 0.5).ap == 1.0


def test_errors():
    gts = [GroundTruth(0, 0, (0, 0, 1, 1))]
    with pytest.raises(ValueError):
        ap_per_class([], gts, 1, 0.5)
    with pytest.raises(ValueError):
        ap_per_class([], gts, 0, 0.0)
    with pytest.raises(ValueError):
        map_eval([], gts, [])


def test_no_detections_gives_zero():
    gts = [GroundTruth(0, 0, (0, 0, 1, 1))]
    r = map_eval([], gts, range(4))
    assert list(r.per_class) == [0] and r.map == 0.0


def test_average_precision_envelope():
    r = np.array([0.25, 0.25, 0.5, 0.75])
    p = np.array([1.0, 0.5, 0.6, 0.5])
    assert average_precision(r, p) == pytest.approx(0.25 * 1 + 0.25 * 0.6 + 0.25 * 0.5)
    assert average_precision(np.zeros(0), np.zeros(0)) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.randoms(use_true_random=False))
def test_perfect_detections_score_one(rng):
    _, gts = random_instance(rng)
    gts = [g for g in gts if not g.ignore]
    if not gts:
        return
    dets = [Detection(g.frame_id, g.class_id, g.bbox, 0.9) for g in gts]
    assert map_eval(dets, gts, [0, 1], 0.7).map == 1.0
    assert recall_at(dets, gts, 0.5) == 1.0


def test_recall_class_awareness():
    gts = [GroundTruth(0, 0, (0, 0, 10, 10)), GroundTruth(0, 1, (20, 20, 30, 30))]
    dets = [Detection(0, 1, (0, 0, 10, 10), 0.9)]
    assert recall_at(dets, gts, 0.5) == 0.0
    assert recall_at(dets, gts, 0.5, class_aware=False) == 0.5
    assert recall_at(dets, [], 0.5) == 0.0


def test_reporting_formats():
    gts = [GroundTruth(0, 0, (0, 0, 10, 10)), GroundTruth(0, 2, (0, 0, 10, 10))]
    dets = [Detection(0, 0, (0, 0, 10, 10), 0.9)]
    r = map_eval(dets, gts, range(4), 0.7)
    doc = json.loads(r.to_json())
    assert doc["iou_threshold"] == 0.7 and doc["mAP"] == 0.5
    assert set(doc["classes"]) == {"car", "bus"}
    lines = r.to_table("toy").splitlines()
    assert [c.strip() for c in lines[0].split("|")] == ["method", "mAP", "car", "van", "bus", "others"]
    assert [c.strip() for c in lines[2].split("|")] == ["toy", "50.00", "100.00", "-", "0.00", "-"]
