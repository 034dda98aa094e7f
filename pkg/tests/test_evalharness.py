"""Period matching, error tables, and the assembled metrics report.

The interval assignment is checked against a brute-force search over all
injective pairings; error statistics come from tiny hand-computed tables.
"""

import itertools
import json

import numpy as np
import pytest

from roadwatch import calib as _calib
from roadwatch import evalharness as ev
from roadwatch import pipeline as pl
from roadwatch import simulate as sim
from roadwatch.errors import DataError, EmptyMatches

from scenefactory import CAMERA_POSES, FPS, camera_for, full_road_polygon, make_scenario


def period(pid, a, b):
    return ev.PeriodRecord(id=pid, enter_time=a, exit_time=b)


# ── interval_iou / PeriodRecord ─────────────────────────────────────────────

def test_interval_iou_values():
    assert ev.interval_iou(period(1, 0, 10), period(2, 0, 10)) == 1.0
    assert ev.interval_iou(period(1, 0, 10), period(2, 5, 15)) == pytest.approx(1 / 3)
    assert ev.interval_iou(period(1, 0, 10), period(2, 20, 30)) == 0.0
    assert ev.interval_iou(period(1, 0, 10), period(2, 10, 20)) == 0.0  # touching


def test_interval_iou_symmetric():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a0, b0 = sorted(rng.uniform(0, 100, 2))
        a1, b1 = sorted(rng.uniform(0, 100, 2))
        if b0 == a0 or b1 == a1:
            continue
        p, q = period(1, a0, b0), period(2, a1, b1)
        assert ev.interval_iou(p, q) == ev.interval_iou(q, p)
        assert 0.0 <= ev.interval_iou(p, q) <= 1.0


def test_period_record_requires_positive_duration():
    with pytest.raises(ValueError):
        period(1, 5.0, 5.0)
    with pytest.raises(ValueError):
        period(1, 5.0, 4.0)


# ── match_periods ───────────────────────────────────────────────────────────

def test_identical_periods_match_fully():
    gt = [period(10, 0, 4), period(20, 3, 9), period(30, 8, 12)]
    est = [period(1, 0, 4), period(2, 3, 9), period(3, 8, 12)]
    matches, recall = ev.match_periods(est, gt)
    assert recall == 1.0
    assert sorted(matches) == [(1, 10, 1.0), (2, 20, 1.0), (3, 30, 1.0)]


def test_low_overlap_dropped_by_threshold():
    gt = [period(10, 0, 10)]
    est = [period(1, 0, 4)]  # IoU 0.4
    matches, recall = ev.match_periods(est, gt, l_iou=0.5)
    assert matches == [] and recall == 0.0
    matches, recall = ev.match_periods(est, gt, l_iou=0.4)
    assert recall == 1.0 and matches[0][2] == pytest.approx(0.4)


def test_assignment_prefers_total_overlap():
    # the best single pair (e2, g1) would starve e1; the optimal assignment
    # crosses them and keeps both above threshold
    gt = [period(10, 0, 10), period(20, 2, 12)]
    est = [period(1, 0, 12), period(2, 0, 10)]
    matches, recall = ev.match_periods(est, gt, l_iou=0.5)
    assert recall == 1.0
    assert sorted((e, g) for e, g, _ in matches) == [(1, 20), (2, 10)]


def test_assignment_matches_brute_force():
    rng = np.random.default_rng(99)
    for _ in range(60):
        n_est, n_gt = int(rng.integers(1, 6)), int(rng.integers(1, 6))

        def rand_periods(n, base):
            out = []
            for i in range(n):
                a = rng.uniform(0, 30)
                out.append(period(base + i, a, a + rng.uniform(1, 15)))
            return out

        est, gt = rand_periods(n_est, 1), rand_periods(n_gt, 100)
        matches, _ = ev.match_periods(est, gt, l_iou=1e-9)
        iou = {(e.id, g.id): ev.interval_iou(e, g) for e in est for g in gt}
        got = sum(iou[(e, g)] for e, g, _ in matches)
        k = min(n_est, n_gt)
        best = 0.0
        for rows in itertools.permutations(range(n_est), k):
            for cols in itertools.permutations(range(n_gt), k):
                total = sum(iou[(est[i].id, gt[j].id)] for i, j in zip(rows, cols))
                best = max(best, total)
        # pairs under the (tiny) gate are excluded from got but not from best
        assert got == pytest.approx(best, abs=1e-6)


def test_match_periods_validates_inputs():
    with pytest.raises(DataError):
        ev.match_periods([period(1, 0, 1)], [])
    with pytest.raises(ValueError):
        ev.match_periods([period(1, 0, 1)], [period(2, 0, 1)], l_iou=0.0)
    with pytest.raises(ValueError):
        ev.match_periods([period(1, 0, 1)], [period(2, 0, 1)], l_iou=1.5)


def test_unmatched_estimates_do_not_hurt_recall():
    gt = [period(10, 0, 10)]
    est = [period(1, 0, 10), period(2, 50, 60)]
    matches, recall = ev.match_periods(est, gt)
    assert recall == 1.0
    assert len(matches) == 1


# ── median and error tables ─────────────────────────────────────────────────

def test_median_is_lower_middle_sample():
    assert ev._median([5.0, 1.0, 3.0]) == 3.0
    assert ev._median([4.0, 1.0, 3.0, 2.0]) == 2.0
    assert ev._median([7.0]) == 7.0


def test_speed_metrics_hand_table():
    matches = [(1, 10, 1.0), (2, 20, 1.0)]
    block = ev.speed_metrics(matches, {1: 82.0, 2: 77.0}, {10: 80.0, 20: 80.0})
    assert block["abs_mean"] == pytest.approx(2.5)
    assert block["abs_median"] == pytest.approx(2.0)
    assert block["rel_mean"] == pytest.approx((0.025 + 0.0375) / 2)
    assert block["rel_median"] == pytest.approx(0.025)
    assert block["count"] == 2


def test_speed_metrics_perfect_estimates():
    block = ev.speed_metrics([(1, 10, 1.0)], {1: 64.0}, {10: 64.0})
    assert block["abs_mean"] == 0.0 and block["rel_median"] == 0.0


def test_speed_metrics_requires_overlap():
    with pytest.raises(EmptyMatches):
        ev.speed_metrics([(1, 10, 1.0)], {}, {10: 80.0})
    # pairs without both speeds are skipped, not scored as zero
    block = ev.speed_metrics(
        [(1, 10, 1.0), (2, 20, 1.0)], {1: 82.0}, {10: 80.0, 20: 75.0}
    )
    assert block["count"] == 1


# ── distance metrics ────────────────────────────────────────────────────────

def line_rows_for(pose, lines_m):
    scenario = sim.load_scenario(make_scenario(
        pose,
        [{"id": 1, "pos": (0.0, 0.0), "vel": (0.0, 10.0)}],
        5,
        lines_m=lines_m,
    ))
    _, truth = sim.simulate(scenario, seed=0)
    camera = _calib.load_calibration(truth[0]["calibration"])
    return [r for r in truth if r["type"] == "line"], camera


def test_distance_metrics_exact_on_true_calibration():
    lines, camera = line_rows_for(CAMERA_POSES[0], [
        {"group": "u", "a": (-2.0, 0.0), "b": (-2.0, 20.0)},
        {"group": "u", "a": (2.0, -5.0), "b": (2.0, 10.0)},
        {"group": "v", "a": (-3.0, 5.0), "b": (3.0, 5.0)},
    ])
    report = ev.distance_metrics(lines, camera, _calib.plane_basis(camera))
    assert report["toward_u"]["count"] == 2
    assert report["toward_v"]["count"] == 1
    for key in ("toward_u", "toward_v"):
        assert report[key]["abs_mean"] <= 1e-6
        assert report[key]["rel_median"] <= 1e-8


def test_distance_metrics_degrade_with_wrong_calibration():
    lines, camera = line_rows_for(CAMERA_POSES[0], [
        {"group": "u", "a": (-2.0, 0.0), "b": (-2.0, 20.0)},
    ])
    wrong = _calib.derive_camera(
        u=(camera.u.x + 120.0, camera.u.y),
        v=(camera.v.x, camera.v.y),
        c=(camera.c.x, camera.c.y),
        d=camera.d,
        lam=camera.lam,
        image_size=camera.image_size,
    )
    bad = ev.distance_metrics(lines, wrong, _calib.plane_basis(wrong))
    assert bad["toward_u"]["abs_mean"] > 1e-3


def test_distance_metrics_empty_group_is_none():
    lines, camera = line_rows_for(CAMERA_POSES[0], [
        {"group": "u", "a": (-2.0, 0.0), "b": (-2.0, 20.0)},
    ])
    report = ev.distance_metrics(lines, camera, _calib.plane_basis(camera))
    assert report["toward_v"] is None


def test_distance_metrics_rejects_unknown_group():
    lines, camera = line_rows_for(CAMERA_POSES[0], [
        {"group": "u", "a": (-2.0, 0.0), "b": (-2.0, 20.0)},
    ])
    lines[0]["group"] = "w"
    with pytest.raises(DataError):
        ev.distance_metrics(lines, camera, _calib.plane_basis(camera))


# ── prediction metrics ──────────────────────────────────────────────────────

def test_prediction_scores_against_offset_frame():
    fps, lam = 25.0, 2.0
    frame_rows = [{
        "frame": 10,
        "tracks": [{
            "track_id": 7,
            "center": [0.0, 0.0],
            "speed_kmh": 40.0,
            "predictions": [
                {"t_offset": 0.12, "center": [5.0, 5.5], "speed_kmh": 40.0},
                {"t_offset": 0.24, "center": [0.0, 0.0], "speed_kmh": 40.0},
            ],
        }],
    }]
    gt_states = {
        (1, 13): {"center": [5.0, 5.0], "speed_kmh": 36.0},
        # no state at frame 10 + 6: the +0.24 horizon goes unscored
    }
    report = ev.prediction_metrics(frame_rows, gt_states, fps, lam, id_map={7: 1})
    assert set(report) == {"+0.12"}
    block = report["+0.12"]
    assert block["loc_mean_m"] == pytest.approx(1.0)  # 0.5 plane units * lam
    assert block["speed_abs_mean_kmh"] == pytest.approx(4.0)
    assert block["speed_rel_median"] == pytest.approx(4.0 / 36.0)
    assert block["count"] == 1


def test_prediction_ignores_unmapped_tracks():
    frame_rows = [{
        "frame": 0,
        "tracks": [{
            "track_id": 3,
            "center": [0.0, 0.0],
            "speed_kmh": 10.0,
            "predictions": [{"t_offset": 0.12, "center": [0, 0], "speed_kmh": 10.0}],
        }],
    }]
    gt_states = {(1, 3): {"center": [0.0, 0.0], "speed_kmh": 10.0}}
    assert ev.prediction_metrics(frame_rows, gt_states, 25.0, 1.0, id_map={}) == {}


# ── periods_from_frames ─────────────────────────────────────────────────────

def track_row(frame, tid, t_coord, speed):
    return {
        "frame": frame,
        "tracks": [{
            "track_id": tid,
            "center": [0.0, t_coord],
            "speed_kmh": speed,
            "predictions": [],
        }],
    }


def test_periods_from_frames_boundaries_and_speeds():
    rows = [
        track_row(0, 1, -5.0, None),
        track_row(1, 1, 2.0, 50.0),
        track_row(2, 1, 6.0, 52.0),
        track_row(3, 1, 11.0, 53.0),  # past the area
    ]
    periods, speeds = ev.periods_from_frames(rows, (0.0, 10.0), fps=25.0)
    assert len(periods) == 1
    assert periods[0].id == 1
    assert periods[0].enter_time == pytest.approx(1 / 25.0)
    assert periods[0].exit_time == pytest.approx(2 / 25.0)
    assert speeds[1] == 52.0


def test_single_frame_visit_skipped():
    rows = [track_row(4, 2, 5.0, 44.0)]
    periods, speeds = ev.periods_from_frames(rows, (0.0, 10.0), fps=25.0)
    assert periods == []
    assert speeds[2] == 44.0


# ── evaluate_run ────────────────────────────────────────────────────────────

def full_run(emit_track_ids=True):
    scenario = sim.load_scenario(make_scenario(
        CAMERA_POSES[0],
        [
            {"id": 1, "pos": (-2.0, -14.0), "vel": (0.0, 12.0)},
            {"id": 2, "pos": (2.0, -24.0), "vel": (0.0, 15.0)},
        ],
        45,
        seed_area_m=(-5.0, 12.0),
        lines_m=[
            {"group": "u", "a": (-2.0, 0.0), "b": (-2.0, 20.0)},
            {"group": "v", "a": (-3.0, 5.0), "b": (3.0, 5.0)},
        ],
        emit_track_ids=emit_track_ids,
    ))
    dets, truth = sim.simulate(scenario, seed=0)
    records = [pl.parse_detection(obj) for obj in dets]
    cfg = pl.SceneConfig(road_polygon=full_road_polygon(), fps=FPS)
    camera = camera_for(CAMERA_POSES[0])
    frame_rows = [out.to_dict() for out in pl.run_stream(records, cfg, camera)]
    return frame_rows, truth


def test_evaluate_run_full_report():
    frame_rows, truth = full_run()
    report = ev.evaluate_run(frame_rows, truth)
    assert set(report) == {"distance", "speed", "prediction", "matching"}
    m = report["matching"]
    assert m["recall"] == 1.0
    assert m["matched"] == m["gt_total"] == 2
    assert m["unmatched_est"] == 0
    assert report["distance"]["toward_u"]["abs_mean"] <= 1e-6
    assert report["distance"]["toward_v"]["abs_mean"] <= 1e-6
    assert report["speed"]["abs_mean"] <= 0.5
    assert report["prediction"]["+0.12"]["loc_mean_m"] <= 0.05
    assert report["prediction"]["+0.24"]["count"] > 0
    json.dumps(report)  # must be serializable as produced


def test_evaluate_run_requires_meta_and_periods():
    frame_rows, truth = full_run()
    with pytest.raises(DataError):
        ev.evaluate_run(frame_rows, [r for r in truth if r.get("type") != "meta"])
    with pytest.raises(DataError):
        ev.evaluate_run(frame_rows, [r for r in truth if r.get("type") != "period"])
    no_area = [dict(r) for r in truth]
    no_area[0]["measurement_area"] = None
    with pytest.raises(DataError):
        ev.evaluate_run(frame_rows, no_area)
