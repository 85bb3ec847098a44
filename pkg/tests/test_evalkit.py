import json
import math

import jsonschema
import numpy as np
import pytest
from conftest import random_ap_case
from hypothesis import given, settings
from hypothesis import strategies as st

from pcbir.datapipe import BoundingBox
from pcbir.evalkit import (
    IOU_THRESHOLDS,
    REPORT_COLUMNS,
    Detection,
    EvalReport,
    GroundTruthBox,
    ap_oracle,
    average_precision,
    iou,
    map_suite,
    match_detections,
    pr_curve,
    read_report_csv,
    validate_report_json,
    write_reports,
)

seeds = st.integers(0, 2**32 - 1)


def corners(x1, y1, x2, y2):
    return BoundingBox.from_corners(x1, y1, x2, y2)


def gt(x1, y1, x2, y2, image=0):
    return GroundTruthBox(corners(x1, y1, x2, y2), image)


def det(x1, y1, x2, y2, score, image=0):
    return Detection(corners(x1, y1, x2, y2), score, image)


# -- iou --

def test_iou_values():
    assert iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7)
    assert iou((0, 0, 1, 1), (0, 0, 1, 1)) == 1.0
    assert iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0
    assert iou((0, 0, 1, 1), (1, 0, 2, 1)) == 0.0
    assert iou((0, 0, 0, 1), (0, 0, 1, 1)) == 0.0


@given(seeds)
def test_iou_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = sorted(rng.uniform(0, 1, 2)), sorted(rng.uniform(0, 1, 2))
    c, d = sorted(rng.uniform(0, 1, 2)), sorted(rng.uniform(0, 1, 2))
    box1, box2 = (a[0], c[0], a[1], c[1]), (b[0], d[0], b[1], d[1])
    v = iou(box1, box2)
    assert 0.0 <= v <= 1.0 and v == pytest.approx(iou(box2, box1))


# -- matching --

def test_single_tp():
    r = match_detections([det(0, 0, 0.5, 0.6, 0.9)], [gt(0, 0, 0.5, 0.5)], 0.5)
    assert r.is_true_positive == [True] and r.gt_covered == [True]


def test_duplicate_detection_is_fp():
    g = [gt(0, 0, 0.5, 0.5)]
    r = match_detections([det(0, 0, 0.5, 0.55, 0.7), det(0, 0, 0.5, 0.5, 0.9)], g)
    assert r.is_true_positive == [False, True] and r.matched_gt == [None, 0]


def test_iou_tie_goes_to_lower_index():
    g = [gt(0, 0, 0.4, 0.4), gt(0.2, 0, 0.6, 0.4)]
    r = match_detections([det(0.1, 0, 0.5, 0.4, 0.9)], g, 0.3)
    assert r.matched_gt == [0]


def test_matching_respects_images():
    r = match_detections([det(0, 0, 0.5, 0.5, 0.9, image=1)], [gt(0, 0, 0.5, 0.5, image=0)])
    assert r.fp == 1


def test_no_ground_truths():
    r = match_detections([det(0, 0, 1, 1, 0.5)] * 3, [])
    assert r.fp == 3 and r.recall == 0.0 and r.undefined_recall


# -- AP --

def test_ap_simple_cases():
    g = [gt(0, 0, 0.5, 0.5)]
    assert average_precision([det(0, 0, 0.5, 0.5, 0.9)], g) == 1.0
    assert average_precision([det(0, 0, 0.5, 0.5, 0.9), det(0.6, 0.6, 0.9, 0.9, 0.8)], g) == 1.0
    assert average_precision([det(0.6, 0.6, 0.9, 0.9, 0.8)], g) == 0.0
    assert average_precision([], g) == 0.0
    assert ap_oracle([], g) == 0.0
    with pytest.raises(ValueError):
        average_precision([det(0, 0, 1, 1, 0.9)], [])


def test_ap_fp_above_tp():
    # P/R points (0, 0) then (1, 0.5): envelope 0.5 at every recall level
    g = [gt(0, 0, 0.5, 0.5)]
    dets = [det(0.6, 0.6, 0.9, 0.9, 0.9), det(0, 0, 0.5, 0.5, 0.8)]
    assert average_precision(dets, g) == pytest.approx(0.5)
    assert average_precision(dets, g, mode="all-points") == pytest.approx(0.5)


def test_ap_half_recall():
    # one of two gts found at precision 1: levels 0.00..0.50 score 1, the rest 0
    g = [gt(0, 0, 0.3, 0.3), gt(0.5, 0.5, 0.9, 0.9)]
    value = average_precision([det(0, 0, 0.3, 0.3, 0.9)], g)
    assert value == pytest.approx(51 / 101, abs=1e-12)
    assert average_precision([det(0, 0, 0.3, 0.3, 0.9)], g, mode="all-points") == pytest.approx(0.5)


def test_tied_scores_form_one_threshold():
    g = [gt(0, 0, 0.5, 0.5)]
    dets = [det(0.6, 0.6, 0.9, 0.9, 0.5), det(0, 0, 0.5, 0.5, 0.5)]
    recall, precision, thresholds = pr_curve(dets, g)
    assert list(thresholds) == [0.5] and list(recall) == [1.0] and list(precision) == [0.5]
    # order of tied detections must not matter
    assert average_precision(dets, g) == average_precision(dets[::-1], g) == pytest.approx(0.5)


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        average_precision([det(0, 0, 1, 1, 0.5)], [gt(0, 0, 1, 1)], mode="11-point")


def test_oracle_size_cap():
    with pytest.raises(ValueError, match="30"):
        ap_oracle([det(0, 0, 1, 1, 0.5)] * 31, [gt(0, 0, 1, 1)])


@settings(max_examples=200, deadline=None)
@given(seeds, st.sampled_from([0.5, 0.75]), st.sampled_from(["101-point", "all-points"]))
def test_ap_matches_oracle(seed, threshold, mode):
    dets, gts = random_ap_case(np.random.default_rng(seed))
    assert abs(average_precision(dets, gts, threshold, mode) - ap_oracle(dets, gts, threshold, mode)) < 1e-9


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_ap_rank_only(seed):
    dets, gts = random_ap_case(np.random.default_rng(seed))
    squashed = [Detection(d.box, 1 / (1 + math.exp(-8 * d.score)) - 0.3, d.image_id) for d in dets]
    assert average_precision(squashed, gts) == pytest.approx(average_precision(dets, gts), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_ap_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    dets, gts = random_ap_case(rng)
    # distinct scores: ties legitimately depend on input order in greedy matching
    dets = [Detection(d.box, d.score + 1e-9 * k, d.image_id) for k, d in enumerate(dets)]
    perm_d = [dets[i] for i in rng.permutation(len(dets))]
    for mode in ("101-point", "all-points"):
        assert average_precision(perm_d, gts, mode=mode) == pytest.approx(average_precision(dets, gts, mode=mode),
                                                                           abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_lowest_fp_never_helps(seed):
    dets, gts = random_ap_case(np.random.default_rng(seed))
    low = min((d.score for d in dets), default=1.0) - 0.01
    extra = dets + [Detection(BoundingBox(0, 0.5, 0.5, 0.01, 0.01), low, "elsewhere")]
    assert average_precision(extra, gts) <= average_precision(dets, gts) + 1e-12


@settings(max_examples=100, deadline=None)
@given(seeds, st.floats(0, 1))
def test_tp_for_uncovered_gt_never_hurts(seed, score):
    dets, gts = random_ap_case(np.random.default_rng(seed))
    covered = match_detections(dets, gts).gt_covered
    free = [g for g, c in zip(gts, covered) if not c]
    if not free:
        return
    # a perfect box can still steal a match from a lower-scored detection, so
    # place it on a fresh gt of its own image instead
    new_gt = GroundTruthBox(BoundingBox(0, 0.5, 0.5, 0.01, 0.01), "fresh")
    base = average_precision(dets, gts + [new_gt])
    better = average_precision(dets + [Detection(new_gt.box, score, "fresh")], gts + [new_gt])
    assert better >= base - 1e-12


# -- reports --

def test_perfect_report():
    gts = [gt(0, 0, 0.3, 0.3, i) for i in range(3)]
    dets = [Detection(g.box, 0.9, g.image_id) for g in gts]
    report = map_suite(dets, gts, dataset="perfect")
    assert (report.precision, report.recall, report.map50, report.map50_95) == (1.0, 1.0, 1.0, 1.0)
    assert set(report.ap_by_iou) == {f"{t:.2f}" for t in IOU_THRESHOLDS}
    assert report.row() == ["perfect", "1.000000", "1.000000", "1.000000", "1.000000"]
    assert REPORT_COLUMNS == ("dataset", "precision", "recall", "map50", "map50_95")


def test_confidence_threshold_drives_pr_only():
    gts = [gt(0, 0, 0.3, 0.3)]
    dets = [det(0, 0, 0.3, 0.3, 0.1)]
    report = map_suite(dets, gts, confidence_threshold=0.25)
    assert report.map50 == 1.0 and report.precision == 0.0 and report.recall == 0.0


def test_empty_ground_truth_rejected():
    with pytest.raises(ValueError, match="empty"):
        map_suite([], [])


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_map50_95_not_above_map50(seed):
    dets, gts = random_ap_case(np.random.default_rng(seed))
    report = map_suite(dets, gts)
    assert report.map50_95 <= report.map50 + 1e-9
    assert 0 <= report.precision <= 1 and 0 <= report.recall <= 1


def test_write_and_read_reports(tmp_path):
    reports = [EvalReport("a", 0.5, 0.25, 0.75, 0.5), EvalReport("b", 1.0, 1.0, 1.0, 0.9)]
    write_reports(reports, tmp_path / "r.json", tmp_path / "r.csv")
    rows = read_report_csv(tmp_path / "r.csv")
    assert [r["dataset"] for r in rows] == ["a", "b"] and float(rows[0]["map50"]) == 0.75
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "dataset,precision,recall,map50,map50_95"
    data = json.loads((tmp_path / "r.json").read_text())
    validate_report_json(data)
    data["reports"][0]["precision"] = 1.5
    with pytest.raises(jsonschema.ValidationError):
        validate_report_json(data)
