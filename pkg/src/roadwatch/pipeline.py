"""Per-frame orchestration: detection filtering, track identity, 3D boxes,
kinematics, proximity alerts and danger maps.

The stream contract is JSON Lines, one detection per line:

    {"frame": int, "class": "car|bus|truck", "score": float,
     "bbox": [x, y, w, h], "contour": [[x, y], ...], "track_id": int|null}

Identity policy: the first non-empty frame fixes the mode for the whole
stream. If its records carry track ids, upstream ids are trusted verbatim
from then on; if none do, the fallback IoU tracker assigns ids. Mixing the
two within a stream is rejected as malformed data.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linear_sum_assignment

from roadwatch import box3d as _box3d
from roadwatch import calib as _calib
from roadwatch import danger as _danger
from roadwatch import kinematics as _kin
from roadwatch.box3d import Quadrangle
from roadwatch.calib import CameraCalibration, PlaneBasis
from roadwatch.errors import (
    ConfigError,
    DataError,
    DegenerateIntersection,
    EmptyMask,
    HorizonPoint,
    StaleFrame,
    VanishingPointInsideHull,
)
from roadwatch.geometry import point_in_polygon

logger = logging.getLogger(__name__)

VEHICLE_CLASSES = ("car", "bus", "truck")

#: Geometry failures that drop a single detection without aborting the frame.
RECOVERABLE_GEOMETRY_ERRORS = (
    VanishingPointInsideHull,
    HorizonPoint,
    DegenerateIntersection,
    EmptyMask,
)


@dataclass(frozen=True)
class DetectionRecord:
    frame_no: int
    cls: str
    score: float
    bbox: Tuple[float, float, float, float]  # x, y, w, h
    contour: np.ndarray  # (n, 2) image points
    track_id: Optional[int] = None

    @property
    def area(self) -> float:
        return self.bbox[2] * self.bbox[3]

    @property
    def center(self) -> Tuple[float, float]:
        return (self.bbox[0] + 0.5 * self.bbox[2], self.bbox[1] + 0.5 * self.bbox[3])


CONTOUR_BBOX_TOL_PX = 1.0


def parse_detection(obj: dict, lineno: int = 0) -> DetectionRecord:
    """Validate one JSONL record; raises DataError naming the line."""
    where = f"line {lineno}" if lineno else "record"
    try:
        frame_no = int(obj["frame"])
        cls = obj["class"]
        score = float(obj["score"])
        bbox = tuple(float(x) for x in obj["bbox"])
        contour = np.asarray(obj["contour"], dtype=float)
        track_id = obj.get("track_id")
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{where}: malformed detection record ({exc})") from exc
    if cls not in VEHICLE_CLASSES:
        raise DataError(f"{where}: unknown class {cls!r}, expected one of {VEHICLE_CLASSES}")
    if not 0.0 <= score <= 1.0:
        raise DataError(f"{where}: score {score} outside [0, 1]")
    if len(bbox) != 4 or bbox[2] < 0 or bbox[3] < 0:
        raise DataError(f"{where}: bbox must be [x, y, w, h] with w, h >= 0, got {list(bbox)}")
    if contour.ndim != 2 or contour.shape[1] != 2 or contour.shape[0] < 3:
        raise DataError(f"{where}: contour must be an (n>=3, 2) point list")
    x0, y0, w, h = bbox
    tol = CONTOUR_BBOX_TOL_PX
    if (
        contour[:, 0].min() < x0 - tol
        or contour[:, 0].max() > x0 + w + tol
        or contour[:, 1].min() < y0 - tol
        or contour[:, 1].max() > y0 + h + tol
    ):
        raise DataError(f"{where}: contour extends outside bbox by more than {tol} px")
    if track_id is not None:
        track_id = int(track_id)
    return DetectionRecord(
        frame_no=frame_no, cls=cls, score=score, bbox=bbox, contour=contour, track_id=track_id
    )


def parse_detections(path: Union[str, Path]) -> List[DetectionRecord]:
    """Read the whole detections JSONL; line numbers are 1-based in errors."""
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            records.append(parse_detection(obj, lineno))
    return records


@dataclass(frozen=True)
class SceneConfig:
    """Static per-stream configuration.

    ``road_polygon`` is in image pixels; thresholds with a ``_m`` suffix are
    meters, converted with the calibration scale where needed. ``grid_bounds``
    (optional) pins the danger-map raster to fixed plane-space bounds
    (s0, t0, s1, t1); otherwise the grid is fitted per frame and snapped to
    cell multiples so reruns stay byte-identical.
    """

    road_polygon: np.ndarray
    fps: float
    min_area: float = 900.0
    border_margin: float = 2.0
    alert_threshold_m: float = 2.0
    horizons: Tuple[float, ...] = (0.12, 0.24)
    delta: float = 0.86
    sigma0_m: float = 0.1
    sigma_rate_m: float = 0.05
    min_history: int = 5
    grid_cell_m: float = 0.1
    grid_bounds: Optional[Tuple[float, float, float, float]] = None
    iou_gate: float = 0.1
    max_age: int = 12

    def __post_init__(self):
        if self.fps <= 0:
            raise ConfigError(f"fps must be positive, got {self.fps}")
        if self.min_area <= 0:
            raise ConfigError(f"min_area must be positive, got {self.min_area}")
        if np.asarray(self.road_polygon).ndim != 2 or len(self.road_polygon) < 3:
            raise ConfigError("road_polygon needs at least 3 points")
        if self.alert_threshold_m <= 0:
            raise ConfigError(f"alert_threshold_m must be positive, got {self.alert_threshold_m}")
        if any(h <= 0 for h in self.horizons):
            raise ConfigError(f"horizons must be positive seconds, got {list(self.horizons)}")
        if not 0.0 <= self.delta < 1.0:
            raise ConfigError(f"delta must be in [0, 1), got {self.delta}")
        if self.grid_cell_m <= 0:
            raise ConfigError(f"grid_cell_m must be positive, got {self.grid_cell_m}")
        if self.min_history < 2:
            raise ConfigError(f"min_history must be >= 2, got {self.min_history}")


def load_scene_config(source: Union[str, Path, dict]) -> SceneConfig:
    if not isinstance(source, dict):
        with open(source) as fh:
            source = json.load(fh)
    try:
        kwargs = dict(
            road_polygon=np.asarray(source["road_polygon"], dtype=float),
            fps=float(source["fps"]),
        )
    except KeyError as exc:
        raise ConfigError(f"scene config missing required key {exc}") from exc
    optional = {
        "min_area": float,
        "border_margin": float,
        "alert_threshold_m": float,
        "delta": float,
        "sigma0_m": float,
        "sigma_rate_m": float,
        "min_history": int,
        "grid_cell_m": float,
        "iou_gate": float,
        "max_age": int,
    }
    for key, cast in optional.items():
        if key in source:
            kwargs[key] = cast(source[key])
    if "horizons" in source:
        kwargs["horizons"] = tuple(float(h) for h in source["horizons"])
    if source.get("grid_bounds") is not None:
        gb = source["grid_bounds"]
        if len(gb) != 4:
            raise ConfigError(f"grid_bounds must be [s0, t0, s1, t1], got {gb}")
        kwargs["grid_bounds"] = tuple(float(x) for x in gb)
    return SceneConfig(**kwargs)


def filter_detections(
    dets: Sequence[DetectionRecord],
    cfg: SceneConfig,
    image_size: Sequence[float],
) -> List[DetectionRecord]:
    """Apply the three keep rules: big enough, on the road, fully visible.

    A detection survives when its bbox area is at least ``min_area``, its
    bbox center lies inside the road polygon, and the bbox keeps at least
    ``border_margin`` pixels to every image edge.
    """
    width, height = image_size
    kept = []
    for det in dets:
        if det.area < cfg.min_area:
            logger.debug("frame %d: dropped (area %.0f < %.0f)", det.frame_no, det.area, cfg.min_area)
            continue
        if not point_in_polygon(det.center, cfg.road_polygon):
            logger.debug("frame %d: dropped (center off road)", det.frame_no)
            continue
        x0, y0, w, h = det.bbox
        m = cfg.border_margin
        if x0 < m or y0 < m or x0 + w > width - m or y0 + h > height - m:
            logger.debug("frame %d: dropped (within %s px of border)", det.frame_no, m)
            continue
        kept.append(det)
    return kept


def rect_iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two (x, y, w, h) rectangles."""
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    ix = max(0.0, min(ax0 + aw, bx0 + bw) - max(ax0, bx0))
    iy = max(0.0, min(ay0 + ah, by0 + bh) - max(ay0, by0))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def associate_tracks(
    prev: Sequence[Tuple[int, Sequence[float]]],
    cur: Sequence[DetectionRecord],
    iou_gate: float = 0.1,
    next_id: Optional[int] = None,
) -> Tuple[List[DetectionRecord], int]:
    """Assign ids to ``cur`` by optimal IoU matching against ``prev`` boxes.

    Pairs below ``iou_gate`` stay unmatched; unmatched detections receive
    fresh ids counting up from ``next_id``. Returns the records with ids
    filled in (same order as ``cur``) and the next unused id.
    """
    if next_id is None:
        next_id = max((tid for tid, _ in prev), default=0) + 1
    assigned: Dict[int, int] = {}
    if prev and cur:
        iou = np.array([[rect_iou(bbox, det.bbox) for det in cur] for _, bbox in prev])
        rows, cols = linear_sum_assignment(-iou)
        for r, c in zip(rows, cols):
            if iou[r, c] >= iou_gate:
                assigned[c] = prev[r][0]
    out = []
    for idx, det in enumerate(cur):
        tid = assigned.get(idx)
        if tid is None:
            tid = next_id
            next_id += 1
        out.append(dataclasses.replace(det, track_id=tid))
    return out, next_id


class IouTracker:
    """Fallback identity assignment for streams without upstream track ids.

    Keeps each track's last bbox and last-seen frame; tracks unseen for more
    than ``max_age`` frames are retired and never matched again.
    """

    def __init__(self, iou_gate: float = 0.1, max_age: int = 12):
        self.iou_gate = iou_gate
        self.max_age = max_age
        self.next_id = 1
        self._last: Dict[int, Tuple[Tuple[float, float, float, float], int]] = {}

    def update(self, dets: Sequence[DetectionRecord], frame_no: int) -> List[DetectionRecord]:
        self._last = {
            tid: (bbox, seen)
            for tid, (bbox, seen) in self._last.items()
            if frame_no - seen <= self.max_age
        }
        prev = [(tid, bbox) for tid, (bbox, _) in sorted(self._last.items())]
        out, self.next_id = associate_tracks(prev, dets, self.iou_gate, self.next_id)
        for det in out:
            self._last[det.track_id] = (det.bbox, frame_no)
        return out


@dataclass
class TrackOutput:
    track_id: int
    footprint: Quadrangle  # plane coords
    center: np.ndarray
    speed_kmh: Optional[float]
    predictions: List[_kin.Prediction]

    def to_dict(self) -> dict:
        return {
            "track_id": self.track_id,
            "footprint": self.footprint.corners.tolist(),
            "center": self.center.tolist(),
            "speed_kmh": self.speed_kmh,
            "predictions": [
                {
                    "t_offset": p.t_offset,
                    "center": p.center.tolist(),
                    "velocity": p.velocity.tolist(),
                    "acceleration": p.acceleration.tolist(),
                    "speed_kmh": p.speed_kmh,
                    "variance_m2": p.variance_m2,
                    "footprint": p.footprint.corners.tolist(),
                }
                for p in self.predictions
            ],
        }


@dataclass
class FrameOutput:
    frame_no: int
    tracks: List[TrackOutput]
    alerts: List[_danger.ProximityAlert]
    danger_maps: Dict[str, _danger.DangerMap]
    dropped: int = 0

    def to_dict(self, danger_refs: Optional[Dict[str, str]] = None) -> dict:
        return {
            "frame": self.frame_no,
            "tracks": [t.to_dict() for t in self.tracks],
            "alerts": [
                {
                    "track_a": a.track_a,
                    "track_b": a.track_b,
                    "distance_m": a.distance_m,
                    "threshold_m": a.threshold_m,
                }
                for a in self.alerts
            ],
            "danger_maps": danger_refs if danger_refs is not None else {},
            "dropped": self.dropped,
        }


def horizon_label(tau: float) -> str:
    return f"+{tau:g}"


class PipelineState:
    """Mutable per-stream state threaded through process_frame."""

    def __init__(self, cfg: SceneConfig, camera: CameraCalibration, basis: Optional[PlaneBasis] = None):
        self.cfg = cfg
        self.camera = camera
        self.basis = basis if basis is not None else _calib.plane_basis(camera)
        self.tracks: Dict[int, _kin.TrackState] = {}
        self.tracker = IouTracker(iou_gate=cfg.iou_gate, max_age=cfg.max_age)
        self.id_mode: Optional[str] = None  # "upstream" | "tracker", fixed at first non-empty frame
        self.last_frame: Optional[int] = None


def _resolve_ids(dets: List[DetectionRecord], state: PipelineState, frame_no: int) -> List[DetectionRecord]:
    if not dets:
        return dets
    have_ids = [det.track_id is not None for det in dets]
    if state.id_mode is None:
        if all(have_ids):
            state.id_mode = "upstream"
        elif not any(have_ids):
            state.id_mode = "tracker"
        else:
            raise DataError(
                f"frame {frame_no}: mixed track ids (some records carry ids, some do not)"
            )
        logger.info("frame %d: track id mode fixed to %s", frame_no, state.id_mode)
    if state.id_mode == "upstream":
        if not all(have_ids):
            raise DataError(f"frame {frame_no}: missing track_id in an upstream-id stream")
        return dets
    if any(have_ids):
        raise DataError(f"frame {frame_no}: unexpected track_id in a tracker-mode stream")
    return state.tracker.update(dets, frame_no)


def _auto_grid(snapshots: Sequence[_danger.Snapshot], cell: float) -> _danger.GridSpec:
    """Smallest cell-aligned grid covering every footprint plus kernel margin."""
    pts = np.vstack([s.footprint.corners for s in snapshots])
    margin = _danger.KERNEL_TRUNCATION_SIGMAS * max(s.sigma for s in snapshots)
    pad = margin + cell
    s0 = np.floor((pts[:, 0].min() - pad) / cell) * cell
    t0 = np.floor((pts[:, 1].min() - pad) / cell) * cell
    n_s = int(np.ceil((pts[:, 0].max() + pad - s0) / cell))
    n_t = int(np.ceil((pts[:, 1].max() + pad - t0) / cell))
    return _danger.GridSpec(float(s0), float(t0), cell, n_s, n_t)


def process_frame(
    dets: Sequence[DetectionRecord],
    frame_no: int,
    state: PipelineState,
) -> FrameOutput:
    """Run one frame through the full chain.

    Filter, resolve identities, lift each contour to a 3D box and its plane
    footprint, update track kinematics, then derive predictions, pairwise
    proximity alerts and per-horizon danger maps. Detections whose geometry
    degenerates are dropped individually with a logged reason.

    Raises:
        StaleFrame: ``frame_no`` is not beyond the last processed frame.
    """
    cfg, camera, basis = state.cfg, state.camera, state.basis
    if state.last_frame is not None and frame_no <= state.last_frame:
        raise StaleFrame(f"frame {frame_no} after frame {state.last_frame}")
    state.last_frame = frame_no
    if camera.image_size is None:
        raise ConfigError("pipeline needs a calibration with image_size set")

    kept = filter_detections(list(dets), cfg, camera.image_size)
    kept = _resolve_ids(kept, state, frame_no)

    lam = camera.lam
    tracks_out: List[TrackOutput] = []
    footprints: List[Tuple[int, Quadrangle]] = []
    dropped = len(dets) - len(kept)
    for det in kept:
        try:
            box = _box3d.box_from_contour(det.contour, camera)
            footprint = _box3d.bottom_quadrangle(box, camera, basis)
        except RECOVERABLE_GEOMETRY_ERRORS as exc:
            logger.warning(
                "frame %d track %s: dropped (%s: %s)",
                frame_no, det.track_id, type(exc).__name__, exc,
            )
            dropped += 1
            continue
        track = state.tracks.get(det.track_id)
        if track is None:
            track = _kin.TrackState(track_id=det.track_id)
            state.tracks[det.track_id] = track
        _kin.update_track(track, footprint, frame_no, cfg.fps, cfg.delta)
        speed = _kin.speed_kmh(track.v_s, lam) if track.v_s is not None else None
        predictions: List[_kin.Prediction] = []
        if track.history_length >= cfg.min_history:
            predictions = _kin.predict(
                track, cfg.horizons, cfg.fps, lam, cfg.sigma0_m, cfg.sigma_rate_m
            )
        tracks_out.append(
            TrackOutput(
                track_id=det.track_id,
                footprint=footprint,
                center=_kin.center(footprint),
                speed_kmh=speed,
                predictions=predictions,
            )
        )
        footprints.append((det.track_id, footprint))

    alerts = _danger.proximity_alerts(footprints, cfg.alert_threshold_m, lam, frame_no)

    danger_maps: Dict[str, _danger.DangerMap] = {}
    cell = cfg.grid_cell_m / lam
    for k, tau in enumerate(cfg.horizons):
        snapshots = []
        for tout in tracks_out:
            for pred in tout.predictions:
                if pred.t_offset == tau:
                    sigma_plane = np.sqrt(pred.variance_m2) / lam
                    snapshots.append(
                        _danger.Snapshot(tout.track_id, pred.footprint, sigma_plane, tau)
                    )
        if not snapshots:
            continue
        if cfg.grid_bounds is not None:
            s0, t0, s1, t1 = cfg.grid_bounds
            grid = _danger.GridSpec(
                s0, t0, cell, int(round((s1 - s0) / cell)), int(round((t1 - t0) / cell))
            )
        else:
            grid = _auto_grid(snapshots, cell)
        heatmaps = [_danger.vehicle_heatmap(s, grid) for s in snapshots]
        danger_maps[horizon_label(tau)] = _danger.danger_map(heatmaps)

    return FrameOutput(
        frame_no=frame_no, tracks=tracks_out, alerts=alerts, danger_maps=danger_maps, dropped=dropped
    )


def group_by_frame(records: Iterable[DetectionRecord]) -> Iterator[Tuple[int, List[DetectionRecord]]]:
    """Group a frame-sorted record stream; raises StaleFrame on regression."""
    bucket: List[DetectionRecord] = []
    cur: Optional[int] = None
    for rec in records:
        if cur is None or rec.frame_no == cur:
            cur = rec.frame_no
            bucket.append(rec)
            continue
        if rec.frame_no < cur:
            raise StaleFrame(f"frame {rec.frame_no} after frame {cur}")
        yield cur, bucket
        cur, bucket = rec.frame_no, [rec]
    if cur is not None:
        yield cur, bucket


def run_stream(
    records: Iterable[DetectionRecord],
    cfg: SceneConfig,
    camera: CameraCalibration,
) -> Iterator[FrameOutput]:
    """Process an entire detection stream in frame order."""
    state = PipelineState(cfg, camera)
    for frame_no, dets in group_by_frame(records):
        yield process_frame(dets, frame_no, state)
