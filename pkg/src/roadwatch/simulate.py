"""Synthetic scene generator with exact ground truth.

Vehicles are rigid cuboids moving on the road plane under constant
acceleration. Each frame they are forward-projected through the pinhole
model into image contours (the convex hull of the eight projected corners),
optionally jittered, and emitted in the same detections JSONL schema a real
detector would produce. The ground truth file carries exact plane-space
state per frame plus scenario-level measurement lines and in-area periods.

The forward projection here is the inverse of the calibration module's
back-projection and is deliberately written from the plain pinhole formula
so the two routes stay independent.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from roadwatch import calib as _calib
from roadwatch.calib import CameraCalibration, ImagePoint, PlaneBasis
from roadwatch.errors import BehindCamera
from roadwatch.geometry import convex_hull

logger = logging.getLogger(__name__)

BEHIND_EPS = 1e-12


def forward_project(p: Sequence[float], camera: CameraCalibration) -> ImagePoint:
    """Pinhole projection of a world point into the image.

    p_img = c + f * ((P - C)_xy / (P - C)_z)

    Raises:
        BehindCamera: when the point is at or behind the focal plane
            ((P - C)_z <= 0 within 1e-12).
    """
    rel = np.asarray(p, dtype=float) - camera.C
    if rel[2] <= BEHIND_EPS * float(np.linalg.norm(rel)):
        raise BehindCamera(f"world point {tuple(float(x) for x in p)} is behind the camera")
    return ImagePoint(
        camera.c.x + camera.f * rel[0] / rel[2],
        camera.c.y + camera.f * rel[1] / rel[2],
    )


def forward_project_many(points: np.ndarray, camera: CameraCalibration) -> np.ndarray:
    """Vectorized forward_project: (n, 3) world -> (n, 2) image coordinates."""
    rel = np.asarray(points, dtype=float) - camera.C
    bad = rel[:, 2] <= BEHIND_EPS * np.linalg.norm(rel, axis=1)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise BehindCamera(f"world point index {idx} ({points[idx].tolist()}) is behind the camera")
    out = np.empty((len(rel), 2))
    out[:, 0] = camera.c.x + camera.f * rel[:, 0] / rel[:, 2]
    out[:, 1] = camera.c.y + camera.f * rel[:, 1] / rel[:, 2]
    return out


def camera_from_pose(
    f_px: float,
    pitch_deg: float,
    yaw_deg: float,
    height_m: float,
    image_size: Sequence[int] = (1920, 1080),
    fps: float = 25.0,
    d: float = 10.0,
) -> dict:
    """Build a camera config dict from a physical surveillance-camera pose.

    The camera sits ``height_m`` above the road, pitched down by
    ``pitch_deg``; the traffic direction deviates from the camera heading by
    ``yaw_deg`` (must be nonzero, otherwise the cross direction vanishes at
    infinity). Returns the {"u", "v", "c", "d", "lambda", ...} dict the
    scenario schema expects.
    """
    if abs(yaw_deg) < 1e-6:
        raise ValueError("yaw_deg must be nonzero: a zero-yaw cross direction has no finite vanishing point")
    th = math.radians(pitch_deg)
    ps = math.radians(yaw_deg)
    # camera axes in world coords (world: x east, y ahead, z up)
    x_cam = np.array([1.0, 0.0, 0.0])
    y_cam = np.array([0.0, -math.sin(th), -math.cos(th)])
    z_cam = np.array([0.0, math.cos(th), -math.sin(th)])
    traffic = np.array([math.sin(ps), math.cos(ps), 0.0])
    cross = np.array([math.cos(ps), -math.sin(ps), 0.0])
    t_cam = np.array([traffic @ x_cam, traffic @ y_cam, traffic @ z_cam])
    s_cam = np.array([cross @ x_cam, cross @ y_cam, cross @ z_cam])
    if abs(t_cam[2]) < 1e-9 or abs(s_cam[2]) < 1e-9:
        raise ValueError(f"degenerate pose: pitch={pitch_deg}, yaw={yaw_deg}")
    cx, cy = image_size[0] / 2.0, image_size[1] / 2.0
    u = (cx + f_px * t_cam[0] / t_cam[2], cy + f_px * t_cam[1] / t_cam[2])
    v = (cx + f_px * s_cam[0] / s_cam[2], cy + f_px * s_cam[1] / s_cam[2])
    cam = _calib.derive_camera(u=u, v=v, c=(cx, cy), d=d, lam=1.0, image_size=image_size)
    # metric scale: the pinhole sits height_m above the plane, which lies at
    # |n.C + d| plane units from it
    dist_units = abs(float(cam.rho[:3] @ cam.C) + d)
    lam = height_m / dist_units
    return {
        "u": [u[0], u[1]],
        "v": [v[0], v[1]],
        "c": [cx, cy],
        "d": d,
        "lambda": lam,
        "image_size": [int(image_size[0]), int(image_size[1])],
        "fps": fps,
    }


@dataclass
class VehicleSpec:
    """One simulated vehicle: a cuboid on the plane under constant acceleration.

    Positions, velocities and accelerations are plane units (meters when
    lambda = 1); dimensions are meters.
    """

    vehicle_id: int
    dims_m: Tuple[float, float, float]  # length, width, height
    position: Tuple[float, float]  # initial plane (s, t)
    velocity: Tuple[float, float] = (0.0, 0.0)
    acceleration: Tuple[float, float] = (0.0, 0.0)
    spawn_frame: int = 0
    despawn_frame: Optional[int] = None
    cls: str = "car"


@dataclass
class Scenario:
    camera: dict
    duration_frames: int
    vehicles: List[VehicleSpec]
    contour_jitter_px: float = 0.0
    drop_probability: float = 0.0
    emit_track_ids: bool = True
    measurement_area: Optional[Tuple[float, float]] = None
    measurement_lines: List[dict] = field(default_factory=list)

    @property
    def fps(self) -> float:
        return float(self.camera.get("fps", 25.0))


def load_scenario(source: Union[str, Path, dict]) -> Scenario:
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            data = json.load(fh)
    else:
        data = dict(source)
    if "camera" not in data or "vehicles" not in data:
        raise ValueError("scenario requires 'camera' and 'vehicles' sections")
    noise = data.get("noise") or {}
    vehicles = []
    for i, veh in enumerate(data["vehicles"]):
        dims = veh.get("dimensions_m", [4.5, 1.8, 1.5])
        vehicles.append(
            VehicleSpec(
                vehicle_id=int(veh.get("id", i + 1)),
                dims_m=(float(dims[0]), float(dims[1]), float(dims[2])),
                position=tuple(float(x) for x in veh["initial_position"]),
                velocity=tuple(float(x) for x in veh.get("velocity", [0.0, 0.0])),
                acceleration=tuple(float(x) for x in veh.get("acceleration", [0.0, 0.0])),
                spawn_frame=int(veh.get("spawn_frame", 0)),
                despawn_frame=None if veh.get("despawn_frame") is None else int(veh["despawn_frame"]),
                cls=veh.get("class", "car"),
            )
        )
    area = data.get("measurement_area")
    return Scenario(
        camera=data["camera"],
        duration_frames=int(data["duration_frames"]),
        vehicles=vehicles,
        contour_jitter_px=float(noise.get("contour_jitter_px", 0.0)),
        drop_probability=float(noise.get("drop_probability", 0.0)),
        emit_track_ids=bool(data.get("emit_track_ids", True)),
        measurement_area=None if area is None else (float(area[0]), float(area[1])),
        measurement_lines=list(data.get("measurement_lines", [])),
    )


def scenario_camera(scenario: Scenario) -> CameraCalibration:
    cam = scenario.camera
    return _calib.derive_camera(
        u=cam["u"],
        v=cam["v"],
        c=cam["c"],
        d=cam.get("d", 10.0),
        lam=cam["lambda"],
        image_size=cam.get("image_size"),
    )


def vehicle_state(veh: VehicleSpec, tau: float) -> Tuple[np.ndarray, np.ndarray]:
    """Closed-form plane center and velocity at time tau seconds after spawn
    reference time zero (scenario time)."""
    p0 = np.asarray(veh.position, dtype=float)
    v0 = np.asarray(veh.velocity, dtype=float)
    a = np.asarray(veh.acceleration, dtype=float)
    return p0 + v0 * tau + 0.5 * a * tau * tau, v0 + a * tau


def footprint_corners(center: np.ndarray, dims_m: Sequence[float], lam: float) -> np.ndarray:
    """Axle-aligned footprint rectangle in plane coords, counterclockwise.

    Length runs along the traffic direction (t), width across it (s).
    """
    half_w = 0.5 * dims_m[1] / lam
    half_l = 0.5 * dims_m[0] / lam
    s, t = float(center[0]), float(center[1])
    return np.array([
        [s - half_w, t - half_l],
        [s + half_w, t - half_l],
        [s + half_w, t + half_l],
        [s - half_w, t + half_l],
    ])


def cuboid_world_corners(
    footprint: np.ndarray,
    height_m: float,
    camera: CameraCalibration,
    basis: PlaneBasis,
) -> np.ndarray:
    """Eight world-space cuboid corners: four on the plane, four lifted
    toward the camera side of the plane by the vehicle height."""
    bottom = _calib.plane_to_world_many(footprint, camera, basis)
    n_hat = camera.rho[:3]
    side = math.copysign(1.0, float(n_hat @ camera.C) + camera.d)
    up = side * n_hat * (height_m / camera.lam)
    top = bottom + up[None, :]
    return np.vstack([bottom, top])


def simulate(scenario: Scenario, seed: int = 0) -> Tuple[List[dict], List[dict]]:
    """Run a scenario; returns (detection rows, ground-truth rows).

    Both lists are JSON-serializable dicts in stable field order, ready to be
    written as JSONL. Determinism: identical scenario + seed give identical
    rows.
    """
    camera = scenario_camera(scenario)
    basis = _calib.plane_basis(camera)
    rng = np.random.default_rng(seed)
    fps = scenario.fps
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    width, height = (camera.image_size if camera.image_size else (None, None))

    detections: List[dict] = []
    truth: List[dict] = []
    truth.append({
        "type": "meta",
        "fps": fps,
        "lambda": camera.lam,
        "d": camera.d,
        "duration_frames": scenario.duration_frames,
        "measurement_area": None if scenario.measurement_area is None else list(scenario.measurement_area),
        "seed": seed,
        "calibration": _calib.calibration_to_dict(camera),
    })
    for line in scenario.measurement_lines:
        a_pp = np.asarray(line["a"], dtype=float)
        b_pp = np.asarray(line["b"], dtype=float)
        a_img = forward_project(_calib.plane_to_world(a_pp, camera, basis), camera)
        b_img = forward_project(_calib.plane_to_world(b_pp, camera, basis), camera)
        truth.append({
            "type": "line",
            "group": line["group"],
            "image": [[a_img.x, a_img.y], [b_img.x, b_img.y]],
            "plane": [a_pp.tolist(), b_pp.tolist()],
            "length_m": camera.lam * float(np.linalg.norm(b_pp - a_pp)),
        })

    area_frames: dict = {veh.vehicle_id: [] for veh in scenario.vehicles}
    area_speeds: dict = {veh.vehicle_id: [] for veh in scenario.vehicles}

    for frame in range(scenario.duration_frames):
        tau = frame / fps
        for veh in scenario.vehicles:
            despawn = scenario.duration_frames if veh.despawn_frame is None else veh.despawn_frame
            if not (veh.spawn_frame <= frame < despawn):
                continue
            center, velocity = vehicle_state(veh, tau)
            speed_kmh = float(np.linalg.norm(velocity)) * camera.lam * 3.6
            footprint = footprint_corners(center, veh.dims_m, camera.lam)
            corners_w = cuboid_world_corners(footprint, veh.dims_m[2], camera, basis)
            try:
                corners_img = forward_project_many(corners_w, camera)
            except BehindCamera:
                corners_img = None
            visible = corners_img is not None
            if visible and width is not None:
                xs, ys = corners_img[:, 0], corners_img[:, 1]
                visible = xs.max() > 0 and xs.min() < width and ys.max() > 0 and ys.min() < height
            truth.append({
                "type": "state",
                "frame": frame,
                "vehicle": veh.vehicle_id,
                "center": [float(center[0]), float(center[1])],
                "velocity": [float(velocity[0]), float(velocity[1])],
                "speed_kmh": speed_kmh,
                "footprint": footprint.tolist(),
                "corners_image": None if corners_img is None else corners_img.tolist(),
                "visible": bool(visible),
            })
            if scenario.measurement_area is not None:
                lo, hi = scenario.measurement_area
                if lo <= center[1] <= hi:
                    area_frames[veh.vehicle_id].append(frame)
                    area_speeds[veh.vehicle_id].append(speed_kmh)
            if not visible:
                continue
            if scenario.drop_probability > 0 and rng.random() < scenario.drop_probability:
                continue
            hull = np.array(convex_hull(corners_img))
            if scenario.contour_jitter_px > 0:
                hull = hull + rng.normal(0.0, scenario.contour_jitter_px, hull.shape)
            x0, y0 = hull[:, 0].min(), hull[:, 1].min()
            bbox = [float(x0), float(y0), float(hull[:, 0].max() - x0), float(hull[:, 1].max() - y0)]
            detections.append({
                "frame": frame,
                "class": veh.cls,
                "score": 1.0,
                "bbox": bbox,
                "contour": [[float(p[0]), float(p[1])] for p in hull],
                "track_id": veh.vehicle_id if scenario.emit_track_ids else None,
            })

    if scenario.measurement_area is not None:
        for veh in scenario.vehicles:
            frames = area_frames[veh.vehicle_id]
            if not frames:
                continue
            truth.append({
                "type": "period",
                "vehicle": veh.vehicle_id,
                "enter_s": frames[0] / fps,
                "exit_s": frames[-1] / fps,
                "enter_frame": frames[0],
                "exit_frame": frames[-1],
                "mean_speed_kmh": float(np.mean(area_speeds[veh.vehicle_id])),
            })
    return detections, truth


def write_jsonl(rows: List[dict], path: Union[str, Path]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def read_jsonl(path: Union[str, Path]) -> List[dict]:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: malformed JSON on line {lineno}: {exc}") from exc
    return rows
