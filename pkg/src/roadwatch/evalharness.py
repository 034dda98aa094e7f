"""Offline evaluation: period matching, distance, speed and prediction errors.

Vehicles are matched between estimate and ground truth by the overlap (IoU)
of their presence intervals in the measurement area, solved as an optimal
one-to-one assignment; pairs with IoU below the threshold are dropped and
count against recall. Error tables report mean and median; the median is the
lower-middle order statistic for even counts, so it is always a sample value.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from roadwatch import calib as _calib
from roadwatch.calib import CameraCalibration, PlaneBasis
from roadwatch.errors import DataError, EmptyMatches

logger = logging.getLogger(__name__)

DEFAULT_L_IOU = 0.5


@dataclass(frozen=True)
class PeriodRecord:
    """Presence interval of one vehicle in the measurement area, seconds."""

    id: int
    enter_time: float
    exit_time: float

    def __post_init__(self):
        if not self.exit_time > self.enter_time:
            raise ValueError(
                f"period for id {self.id} must have exit > enter, got "
                f"[{self.enter_time}, {self.exit_time}]"
            )


def interval_iou(a: PeriodRecord, b: PeriodRecord) -> float:
    """Overlap over union of two time intervals, in [0, 1]."""
    inter = min(a.exit_time, b.exit_time) - max(a.enter_time, b.enter_time)
    if inter <= 0:
        return 0.0
    union = max(a.exit_time, b.exit_time) - min(a.enter_time, b.enter_time)
    return inter / union


def match_periods(
    est: Sequence[PeriodRecord],
    gt: Sequence[PeriodRecord],
    l_iou: float = DEFAULT_L_IOU,
) -> Tuple[List[Tuple[int, int, float]], float]:
    """Optimal one-to-one period assignment.

    Returns (matches, recall): matches as (est_id, gt_id, iou) with
    iou >= l_iou, recall = matched ground-truth count / total ground truth.
    Unmatched estimates do not penalize recall; callers may report their count.
    """
    if not 0.0 < l_iou <= 1.0:
        raise ValueError(f"l_iou must be in (0, 1], got {l_iou}")
    if not gt:
        raise DataError("ground truth contains no periods to match against")
    matches: List[Tuple[int, int, float]] = []
    if est:
        iou = np.array([[interval_iou(e, g) for g in gt] for e in est])
        rows, cols = linear_sum_assignment(1.0 - iou)
        for r, c in zip(rows, cols):
            if iou[r, c] >= l_iou:
                matches.append((est[r].id, gt[c].id, float(iou[r, c])))
    recall = len(matches) / len(gt)
    return matches, recall


def _median(values: Sequence[float]) -> float:
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def _error_block(abs_errors: Sequence[float], rel_errors: Sequence[float]) -> dict:
    return {
        "abs_mean": float(np.mean(abs_errors)),
        "abs_median": float(_median(abs_errors)),
        "rel_mean": float(np.mean(rel_errors)),
        "rel_median": float(_median(rel_errors)),
        "count": len(abs_errors),
    }


def speed_metrics(
    matches: Sequence[Tuple[int, int, float]],
    est_speeds: Mapping[int, float],
    gt_speeds: Mapping[int, float],
) -> dict:
    """Absolute (km/h) and relative speed errors over matched vehicle pairs.

    The estimate is the smoothed speed at the vehicle's last appearance; the
    reference is the ground-truth average over the measurement area.

    Raises:
        EmptyMatches: no matched pair carries both speeds.
    """
    abs_err, rel_err = [], []
    for est_id, gt_id, _ in matches:
        if est_id not in est_speeds or gt_id not in gt_speeds:
            continue
        e, g = est_speeds[est_id], gt_speeds[gt_id]
        abs_err.append(abs(e - g))
        rel_err.append(abs(e - g) / g)
    if not abs_err:
        raise EmptyMatches("no matched pairs with speed estimates")
    return _error_block(abs_err, rel_err)


def distance_metrics(
    lines: Sequence[dict],
    camera: CameraCalibration,
    basis: PlaneBasis,
) -> dict:
    """Length errors of annotated measurement segments, grouped by direction.

    Each line row carries image endpoints, its direction group ("u" or "v")
    and the true length in meters; the estimate runs the endpoints through
    the calibrated plane measurement.
    """
    groups: Dict[str, Tuple[List[float], List[float]]] = {"u": ([], []), "v": ([], [])}
    for row in lines:
        group = row["group"]
        if group not in groups:
            raise DataError(f"measurement line group {group!r}, expected 'u' or 'v'")
        (a, b) = row["image"]
        est = _calib.measure_distance(a, b, camera, basis)
        gt = float(row["length_m"])
        groups[group][0].append(abs(est - gt))
        groups[group][1].append(abs(est - gt) / gt)
    report = {}
    for group, key in (("u", "toward_u"), ("v", "toward_v")):
        abs_err, rel_err = groups[group]
        report[key] = _error_block(abs_err, rel_err) if abs_err else None
    return report


def prediction_metrics(
    frame_rows: Sequence[dict],
    gt_states: Mapping[Tuple[int, int], dict],
    fps: float,
    lam: float,
    id_map: Mapping[int, int],
) -> dict:
    """Per-horizon location (m) and speed (km/h) prediction errors.

    A prediction at frame n for horizon tau is scored against the ground
    truth state of the mapped vehicle at frame n + round(tau * fps); horizons
    with no scored prediction are omitted. Only tracks in ``id_map`` are
    scored, and the upstream pipeline already excludes short-history tracks.
    """
    per_horizon: Dict[str, Tuple[List[float], List[float], List[float]]] = {}
    for row in frame_rows:
        frame_no = row["frame"]
        for track in row["tracks"]:
            gt_id = id_map.get(track["track_id"])
            if gt_id is None:
                continue
            for pred in track["predictions"]:
                tau = pred["t_offset"]
                target = gt_states.get((gt_id, frame_no + round(tau * fps)))
                if target is None:
                    continue
                loc_err = lam * float(
                    np.linalg.norm(np.asarray(pred["center"]) - np.asarray(target["center"]))
                )
                speed_err = abs(pred["speed_kmh"] - target["speed_kmh"])
                label = f"+{tau:g}"
                bucket = per_horizon.setdefault(label, ([], [], []))
                bucket[0].append(loc_err)
                bucket[1].append(speed_err)
                bucket[2].append(speed_err / target["speed_kmh"])
    report = {}
    for label in sorted(per_horizon, key=lambda s: float(s)):
        loc, spd, rel = per_horizon[label]
        report[label] = {
            "loc_mean_m": float(np.mean(loc)),
            "loc_median_m": float(_median(loc)),
            "speed_abs_mean_kmh": float(np.mean(spd)),
            "speed_abs_median_kmh": float(_median(spd)),
            "speed_rel_mean": float(np.mean(rel)),
            "speed_rel_median": float(_median(rel)),
            "count": len(loc),
        }
    return report


def periods_from_frames(
    frame_rows: Sequence[dict],
    area: Tuple[float, float],
    fps: float,
) -> Tuple[List[PeriodRecord], Dict[int, float]]:
    """Presence periods and last-appearance speeds per output track.

    A track is "in the area" in every frame whose footprint center has its
    along-road coordinate inside [lo, hi]. Single-frame visits cannot form a
    valid interval and are skipped with a warning.
    """
    lo, hi = area
    frames_in: Dict[int, List[int]] = {}
    speeds: Dict[int, float] = {}
    for row in frame_rows:
        for track in row["tracks"]:
            tid = track["track_id"]
            if lo <= track["center"][1] <= hi:
                frames_in.setdefault(tid, []).append(row["frame"])
                if track["speed_kmh"] is not None:
                    speeds[tid] = track["speed_kmh"]
    periods = []
    for tid, frames in sorted(frames_in.items()):
        if frames[-1] == frames[0]:
            logger.warning("track %d seen in area a single frame, skipped", tid)
            continue
        periods.append(PeriodRecord(id=tid, enter_time=frames[0] / fps, exit_time=frames[-1] / fps))
    return periods, speeds


def evaluate_run(
    frame_rows: Sequence[dict],
    truth_rows: Sequence[dict],
    l_iou: float = DEFAULT_L_IOU,
    camera: Optional[CameraCalibration] = None,
) -> dict:
    """Assemble the full metrics report from a pipeline run and ground truth.

    Output sections: "distance" (per direction group), "speed",
    "prediction" (per horizon), "matching" (recall and match counts).
    """
    meta = next((r for r in truth_rows if r.get("type") == "meta"), None)
    if meta is None:
        raise DataError("ground truth stream has no meta row")
    fps, lam = float(meta["fps"]), float(meta["lambda"])
    gt_lines = [r for r in truth_rows if r.get("type") == "line"]
    gt_states = {(r["vehicle"], r["frame"]): r for r in truth_rows if r.get("type") == "state"}
    gt_period_rows = [r for r in truth_rows if r.get("type") == "period"]
    if not gt_period_rows:
        raise DataError("ground truth stream has no period rows (no measurement area?)")
    if meta.get("measurement_area") is None:
        raise DataError("ground truth meta lacks measurement_area")

    gt_periods = [
        PeriodRecord(id=r["vehicle"], enter_time=r["enter_s"], exit_time=r["exit_s"])
        for r in gt_period_rows
    ]
    gt_speeds = {r["vehicle"]: r["mean_speed_kmh"] for r in gt_period_rows}
    est_periods, est_speeds = periods_from_frames(
        frame_rows, tuple(meta["measurement_area"]), fps
    )
    matches, recall = match_periods(est_periods, gt_periods, l_iou)
    matched_est = {m[0] for m in matches}
    id_map = {est_id: gt_id for est_id, gt_id, _ in matches}

    if camera is None and "calibration" in meta:
        camera = _calib.load_calibration(meta["calibration"])
    if gt_lines and camera is not None:
        distance = distance_metrics(gt_lines, camera, _calib.plane_basis(camera))
    else:
        distance = {"toward_u": None, "toward_v": None}
    report = {
        "distance": distance,
        "speed": speed_metrics(matches, est_speeds, gt_speeds),
        "prediction": prediction_metrics(frame_rows, gt_states, fps, lam, id_map),
        "matching": {
            "recall": recall,
            "matched": len(matches),
            "gt_total": len(gt_periods),
            "est_total": len(est_periods),
            "unmatched_est": len(est_periods) - len(matched_est),
        },
    }
    return report
