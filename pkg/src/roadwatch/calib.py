"""Single-camera calibration from two vanishing points.

The camera model is anchored to three image points: the principal point ``c``
and the vanishing points ``u`` (traffic direction) and ``v`` (cross
direction). The focal length follows from the orthogonality of the two
directions, and the road plane is recovered as the plane orthogonal to the
third (vertical) vanishing direction at a fixed offset ``d``. The scale
factor ``lambda`` (meters per plane unit) is a calibration input; nothing in
the image fixes metric scale by itself.

World coordinates: x, y aligned with the image axes, z along the optical
axis, origin such that the camera pinhole sits at ``C = (c_x, c_y, 0)`` and
the focal plane at ``z = f``. A ray through image point ``p`` has direction
``[p_x, p_y, f] - C``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Sequence, Tuple, Union

import numpy as np

from roadwatch.errors import (
    AllParallel,
    HorizonPoint,
    NonPhysical,
    VerticalAtInfinity,
)

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e12
W_Z_EPS = 1e-12
RAY_PARALLEL_EPS = 1e-12


class ImagePoint(NamedTuple):
    x: float
    y: float


class WorldPoint(NamedTuple):
    x: float
    y: float
    z: float


class PlanePoint(NamedTuple):
    """Road-plane coordinates: s along the cross direction, t along traffic."""

    s: float
    t: float


@dataclass(frozen=True)
class CameraCalibration:
    """Derived camera model; all fields beyond the five inputs are cached."""

    u: ImagePoint
    v: ImagePoint
    c: ImagePoint
    d: float
    lam: float
    image_size: Tuple[int, int] | None = None
    f: float = field(init=False, default=0.0)
    w: ImagePoint = field(init=False, default=ImagePoint(0.0, 0.0))
    U: np.ndarray = field(init=False, repr=False, default=None)
    V: np.ndarray = field(init=False, repr=False, default=None)
    C: np.ndarray = field(init=False, repr=False, default=None)
    W: np.ndarray = field(init=False, repr=False, default=None)
    rho: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        c = np.asarray(self.c, dtype=float)
        dot = float(np.dot(u - c, v - c))
        if dot >= 0.0:
            raise NonPhysical(
                f"(u-c).(v-c) = {dot:g} >= 0; vanishing points {tuple(u)} / {tuple(v)} "
                "do not admit a real focal length"
            )
        f = math.sqrt(-dot)
        U = np.array([u[0], u[1], f])
        V = np.array([v[0], v[1], f])
        C = np.array([c[0], c[1], 0.0])
        W = np.cross(U - C, V - C)
        if abs(W[2]) < W_Z_EPS * max(1.0, float(np.linalg.norm(W))):
            raise VerticalAtInfinity(
                f"W_z = {W[2]:g}; the vertical vanishing point lies at infinity"
            )
        w = ImagePoint(W[0] / W[2] * f + c[0], W[1] / W[2] * f + c[1])
        n = np.array([w.x - c[0], w.y - c[1], f])
        n_hat = n / np.linalg.norm(n)
        rho = np.array([n_hat[0], n_hat[1], n_hat[2], float(self.d)])
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "rho", rho)

    @property
    def vanishing_points(self) -> Tuple[ImagePoint, ImagePoint, ImagePoint]:
        return (self.u, self.v, self.w)


def derive_camera(
    u: Sequence[float],
    v: Sequence[float],
    c: Sequence[float],
    d: float = 10.0,
    lam: float = 1.0,
    image_size: Sequence[int] | None = None,
) -> CameraCalibration:
    """Build the full camera model from two vanishing points.

    Args:
        u: vanishing point of the traffic direction, image coords.
        v: vanishing point of the cross direction, image coords.
        c: principal point (image center).
        d: road-plane offset in world units; the plane passes at distance
           ``d`` from the pinhole along the plane normal.
        lam: meters per plane unit.
        image_size: optional (width, height) used by downstream filters.

    Raises:
        NonPhysical: when (u-c).(v-c) >= 0 and no real focal length exists.
        VerticalAtInfinity: when the vertical vanishing point has no finite
            image position (W_z ~ 0).
    """
    if d <= 0:
        raise ValueError(f"plane offset d must be positive, got {d!r}")
    if lam <= 0:
        raise ValueError(f"scale lambda must be positive, got {lam!r}")
    size = None if image_size is None else (int(image_size[0]), int(image_size[1]))
    return CameraCalibration(
        u=ImagePoint(float(u[0]), float(u[1])),
        v=ImagePoint(float(v[0]), float(v[1])),
        c=ImagePoint(float(c[0]), float(c[1])),
        d=float(d),
        lam=float(lam),
        image_size=size,
    )


def fit_vanishing_point(segments: Sequence[Sequence[float]]) -> ImagePoint:
    """Least-squares intersection of a bundle of image line segments.

    Minimizes the sum of squared perpendicular distances to the infinite
    lines carrying the segments, via the 2x2 normal equations. With exactly
    two non-parallel lines the result is their exact intersection.

    Raises:
        AllParallel: when the normal matrix is singular beyond condition
            number 1e12 (all segments near-parallel).
    """
    segs = np.asarray(segments, dtype=float)
    if segs.ndim == 3 and segs.shape[1:] == (2, 2):
        segs = segs.reshape(len(segs), 4)
    if segs.ndim != 2 or segs.shape[1] != 4 or len(segs) == 0:
        raise ValueError(
            f"expected segments as a non-empty (n, 4) or (n, 2, 2) array, got shape {segs.shape}"
        )
    a = segs[:, :2]
    b = segs[:, 2:]
    tangents = b - a
    lengths = np.linalg.norm(tangents, axis=1)
    if np.any(lengths == 0):
        raise ValueError("zero-length segment in vanishing-point fit")
    normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1) / lengths[:, None]
    offsets = np.sum(normals * a, axis=1)
    m = normals.T @ normals
    rhs = normals.T @ offsets
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise AllParallel(
            f"normal matrix condition {cond:.3g} exceeds {CONDITION_LIMIT:g}; "
            "segments are parallel or nearly so"
        )
    sol = np.linalg.solve(m, rhs)
    return ImagePoint(float(sol[0]), float(sol[1]))


def project_to_plane(p: Sequence[float], calib: CameraCalibration) -> WorldPoint:
    """Back-project an image point onto the road plane.

    The ray ``g = [p_x, p_y, f] - C`` is intersected with the plane
    ``rho . [P, 1] = 0``.

    Raises:
        HorizonPoint: when the ray is parallel to the plane (point on the
            horizon line) and no finite intersection exists.
    """
    g = np.array([p[0], p[1], calib.f]) - calib.C
    a, b, cc, d = calib.rho
    denom = a * g[0] + b * g[1] + cc * g[2]
    if abs(denom) < RAY_PARALLEL_EPS * float(np.linalg.norm(g)):
        raise HorizonPoint(f"image point {tuple(float(x) for x in p[:2])} lies on the horizon line")
    t = -(a * calib.C[0] + b * calib.C[1] + d) / denom
    pw = calib.C + t * g
    return WorldPoint(float(pw[0]), float(pw[1]), float(pw[2]))


def project_points_to_plane(points: np.ndarray, calib: CameraCalibration) -> np.ndarray:
    """Vectorized project_to_plane for an (n, 2) array; returns (n, 3)."""
    pts = np.asarray(points, dtype=float)
    g = np.empty((len(pts), 3))
    g[:, 0] = pts[:, 0]
    g[:, 1] = pts[:, 1]
    g[:, 2] = calib.f
    g -= calib.C
    a, b, cc, d = calib.rho
    denom = g @ np.array([a, b, cc])
    bad = np.abs(denom) < RAY_PARALLEL_EPS * np.linalg.norm(g, axis=1)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise HorizonPoint(f"image point index {idx} ({pts[idx].tolist()}) lies on the horizon line")
    t = -(a * calib.C[0] + b * calib.C[1] + d) / denom
    return calib.C[None, :] + t[:, None] * g


@dataclass(frozen=True)
class PlaneBasis:
    """Orthonormal road-plane frame and its Euler factorization.

    ``r`` rows are the unit cross direction (V), plane normal (W) and unit
    traffic direction (U); ``r`` is a proper rotation (det +1). The Euler
    angles satisfy ``Rx(alpha) @ Ry(beta) @ Rz(gamma) == r``.
    """

    r: np.ndarray
    alpha: float
    beta: float
    gamma: float

    @property
    def v_hat(self) -> np.ndarray:
        return self.r[0]

    @property
    def w_hat(self) -> np.ndarray:
        return self.r[1]

    @property
    def u_hat(self) -> np.ndarray:
        return self.r[2]


def rot_x(a: float) -> np.ndarray:
    ca, sa = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, ca, sa], [0.0, -sa, ca]])


def rot_y(b: float) -> np.ndarray:
    cb, sb = math.cos(b), math.sin(b)
    return np.array([[cb, 0.0, -sb], [0.0, 1.0, 0.0], [sb, 0.0, cb]])


def rot_z(g: float) -> np.ndarray:
    cg, sg = math.cos(g), math.sin(g)
    return np.array([[cg, sg, 0.0], [-sg, cg, 0.0], [0.0, 0.0, 1.0]])


def plane_basis(calib: CameraCalibration) -> PlaneBasis:
    """Orthonormal basis of the road plane from the calibration.

    Rows are normalize(V - C), normalize(W), normalize(U - C). The two
    vanishing directions are orthogonal by construction of f, and W is their
    cross product, so the matrix is a rotation; the normal row is negated if
    needed to keep det = +1.
    """
    vb = calib.V - calib.C
    ub = calib.U - calib.C
    rows = np.stack([
        vb / np.linalg.norm(vb),
        calib.W / np.linalg.norm(calib.W),
        ub / np.linalg.norm(ub),
    ])
    if np.linalg.det(rows) < 0:
        rows[1] = -rows[1]
    alpha, beta, gamma = _euler_xyz(rows)
    return PlaneBasis(r=rows, alpha=alpha, beta=beta, gamma=gamma)


def _euler_xyz(r: np.ndarray) -> Tuple[float, float, float]:
    """Angles (alpha, beta, gamma) with Rx(alpha) Ry(beta) Rz(gamma) = r."""
    sb = -r[0, 2]
    sb = min(1.0, max(-1.0, float(sb)))
    beta = math.asin(sb)
    cb = math.cos(beta)
    if abs(cb) < 1e-9:
        # gimbal lock: alpha and gamma are coupled; fix gamma = 0
        gamma = 0.0
        alpha = math.atan2(float(r[1, 0]) * (1.0 if sb > 0 else -1.0), float(r[1, 1]))
    else:
        alpha = math.atan2(float(r[1, 2]), float(r[2, 2]))
        gamma = math.atan2(float(r[0, 1]), float(r[0, 0]))
    return alpha, beta, gamma


def to_plane_coords(p: Sequence[float], basis: PlaneBasis) -> PlanePoint:
    """Rotate a world point into the plane frame and drop the normal part.

    For points on the road plane the normal component is constant, so the
    (s, t) pair preserves distances exactly.
    """
    pw = np.asarray(p, dtype=float)
    return PlanePoint(float(pw @ basis.v_hat), float(pw @ basis.u_hat))


def to_plane_coords_many(points: np.ndarray, basis: PlaneBasis) -> np.ndarray:
    """Vectorized to_plane_coords: (n, 3) world points -> (n, 2) plane coords."""
    pw = np.asarray(points, dtype=float)
    return np.stack([pw @ basis.v_hat, pw @ basis.u_hat], axis=1)


def plane_to_world(pp: Sequence[float], calib: CameraCalibration, basis: PlaneBasis) -> WorldPoint:
    """Inverse of to_plane_coords for points on the road plane."""
    n_hat = calib.rho[:3]
    eps = float(np.dot(n_hat, basis.w_hat))  # +-1: normal row may be negated
    k0 = -calib.d * eps
    pw = pp[0] * basis.v_hat + k0 * basis.w_hat + pp[1] * basis.u_hat
    return WorldPoint(float(pw[0]), float(pw[1]), float(pw[2]))


def plane_to_world_many(points: np.ndarray, calib: CameraCalibration, basis: PlaneBasis) -> np.ndarray:
    """Vectorized plane_to_world: (n, 2) plane coords -> (n, 3) world points."""
    pts = np.asarray(points, dtype=float)
    n_hat = calib.rho[:3]
    eps = float(np.dot(n_hat, basis.w_hat))
    k0 = -calib.d * eps
    return (
        pts[:, 0][:, None] * basis.v_hat[None, :]
        + k0 * basis.w_hat[None, :]
        + pts[:, 1][:, None] * basis.u_hat[None, :]
    )


def measure_distance(
    p1: Sequence[float],
    p2: Sequence[float],
    calib: CameraCalibration,
    basis: PlaneBasis,
) -> float:
    """Metric distance in meters between two image points on the road plane."""
    a = to_plane_coords(project_to_plane(p1, calib), basis)
    b = to_plane_coords(project_to_plane(p2, calib), basis)
    return calib.lam * math.hypot(a.s - b.s, a.t - b.t)


def load_calibration(source: Union[str, Path, dict]) -> CameraCalibration:
    """Read a calibration from a JSON file or an already-parsed dict.

    The file either carries ``u`` and ``v`` directly or a ``parallel_lines``
    object with segment bundles to fit them from:

        {"u": [x, y], "v": [x, y], "c": [x, y], "d": 10,
         "lambda": 0.05, "image_size": [w, h]}
    """
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            data = json.load(fh)
    else:
        data = dict(source)
    lines = data.get("parallel_lines") or {}
    try:
        u = data["u"] if "u" in data else fit_vanishing_point(lines["u"])
        v = data["v"] if "v" in data else fit_vanishing_point(lines["v"])
        c = data["c"]
        d = data.get("d", 10.0)
        lam = data["lambda"]
    except KeyError as exc:
        raise ValueError(f"calibration is missing required key {exc}") from exc
    return derive_camera(u=u, v=v, c=c, d=d, lam=lam, image_size=data.get("image_size"))


def calibration_to_dict(calib: CameraCalibration) -> dict:
    """Serializable form of a calibration, round-trippable via load_calibration."""
    out = {
        "u": [calib.u.x, calib.u.y],
        "v": [calib.v.x, calib.v.y],
        "c": [calib.c.x, calib.c.y],
        "d": calib.d,
        "lambda": calib.lam,
    }
    if calib.image_size is not None:
        out["image_size"] = list(calib.image_size)
    return out
