"""3D bounding boxes from vehicle contours and three vanishing points.

A vehicle silhouette seen from a generic viewpoint is bounded by six lines:
for each vanishing point (traffic direction u, cross direction v, vertical
w), the two tangent lines from that point to the contour. Their pairwise
intersections give six cuboid corners directly; the remaining two (one
visible, one occluded) are reconstructed from the cuboid edge structure.

Vertex layout (edges grouped by the vanishing point their supporting line
passes through):

    toward v: A-B, D-C, E-F, H-G
    toward u: A-D, B-C, F-G, E-H
    toward w: A-E, B-F, D-H, C-G

so A-B-C-D and E-F-G-H... more precisely A,B,C,D and H,G,F,E are the two
faces bounded by u- and v-edges; one of them touches the road.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from roadwatch import calib as _calib
from roadwatch.calib import CameraCalibration, ImagePoint, PlaneBasis
from roadwatch.errors import (
    DegenerateIntersection,
    EmptyMask,
    VanishingPointInsideHull,
)
from roadwatch.geometry import (
    Line,
    convex_hull,
    line_intersection,
    line_point_distance,
    point_in_polygon,
    polygon_area,
)

logger = logging.getLogger(__name__)

SIMPLIFY_TOL_PX = 0.5
CONSISTENCY_TOL_PX = 2.0
VERTICAL_SLOPE_EPS = 1e-9


def extract_contour(mask: np.ndarray) -> np.ndarray:
    """Outer border of the largest connected component of a binary mask.

    Border following on the raster; returns an (n, 2) float array of pixel
    coordinates (x, y), counterclockwise (positive shoelace in x-right,
    y-down coordinates), starting at the lexicographically smallest (y, x)
    pixel. A single-pixel component yields a single-point contour.

    Raises:
        EmptyMask: when the mask has no foreground pixels.
    """
    import cv2

    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"mask must be 2D, got shape {arr.shape}")
    binary = (arr != 0).astype(np.uint8)
    if not binary.any():
        raise EmptyMask("mask has no foreground pixels")
    contours, _ = cv2.findContours(binary, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
    best = max(contours, key=lambda c: (cv2.contourArea(c), len(c)))
    pts = best[:, 0, :].astype(float)
    if len(pts) >= 3 and polygon_area(pts) < 0:
        pts = pts[::-1]
    start = int(np.lexsort((pts[:, 0], pts[:, 1]))[0])
    return np.roll(pts, -start, axis=0)


def simplify_contour(contour: np.ndarray, tol: float = SIMPLIFY_TOL_PX) -> np.ndarray:
    """Drop contour points within ``tol`` of the chord joining their
    neighbors. Cuts rasterized staircase contours down to corner points;
    exact polygon corners always survive."""
    pts = np.asarray(contour, dtype=float)
    n = len(pts)
    if n <= 3:
        return pts.copy()
    keep = np.ones(n, dtype=bool)
    prev = n - 1
    for i in range(n):
        nxt = (i + 1) % n
        a, b, c = pts[prev], pts[i], pts[nxt]
        chord = c - a
        norm = math.hypot(chord[0], chord[1])
        if norm == 0.0:
            keep[i] = False  # duplicate of both neighbors
            continue
        dist = abs(chord[0] * (b[1] - a[1]) - chord[1] * (b[0] - a[0])) / norm
        if dist < tol:
            keep[i] = False
        else:
            prev = i
    if keep.sum() < 3:
        return pts.copy()
    return pts[keep]


@dataclass(frozen=True)
class TangentPair:
    """The two tangent lines from a vanishing point to a contour.

    Tilt of a contour point is the direction angle from the vanishing point,
    taken mod pi in [0, pi). The pair brackets the minimal-width contiguous
    arc covering all tilts (wraparound at 0/pi is cut at the largest angular
    gap); ``l_min`` sits at the arc start, ``l_max`` at the arc end.

    ``touch_min`` / ``touch_max`` are the contact points on the contour hull
    (mean of the contact set when a whole edge lies on the tangent); the box
    construction uses them to order the six tangent edges around the
    silhouette.
    """

    vp: Tuple[float, float]
    l_min: Line
    l_max: Line
    theta_min: float
    theta_max: float  # unwrapped: theta_max >= theta_min, width < pi
    touch_min: Tuple[float, float]
    touch_max: Tuple[float, float]


def tangent_lines(contour: np.ndarray, vp: Sequence[float]) -> TangentPair:
    """Tangent pair from ``vp`` to the contour.

    Raises:
        EmptyMask: for an empty contour.
        VanishingPointInsideHull: when ``vp`` is not strictly outside the
            contour's convex hull (tilt angles would span the half-circle).
    """
    pts = np.asarray(contour, dtype=float)
    if pts.size == 0:
        raise EmptyMask("empty contour")
    hull = convex_hull(pts)
    vpx, vpy = float(vp[0]), float(vp[1])
    if len(hull) == 1:
        if hull[0] == (vpx, vpy):
            raise VanishingPointInsideHull(f"vanishing point {(vpx, vpy)} coincides with the contour")
    elif point_in_polygon((vpx, vpy), np.array(hull), include_boundary=True):
        raise VanishingPointInsideHull(
            f"vanishing point {(vpx, vpy)} lies inside or on the contour hull"
        )
    hp = np.array(hull, dtype=float)
    angles = np.mod(np.arctan2(hp[:, 1] - vpy, hp[:, 0] - vpx), math.pi)
    order = np.argsort(angles, kind="stable")
    sorted_a = angles[order]
    gaps = np.diff(sorted_a)
    wrap_gap = sorted_a[0] + math.pi - sorted_a[-1]
    if len(sorted_a) == 1 or not gaps.size or gaps.max() < wrap_gap:
        theta_min = float(sorted_a[0])
        theta_max = float(sorted_a[-1])
    else:
        cut = int(np.argmax(gaps))
        theta_min = float(sorted_a[cut + 1])
        theta_max = float(sorted_a[cut]) + math.pi

    def contact(theta: float) -> Tuple[float, float]:
        diff = np.mod(angles - theta, math.pi)
        near = (diff < 1e-9) | (diff > math.pi - 1e-9)
        sel = hp[near] if near.any() else hp[[int(np.argmin(np.minimum(diff, math.pi - diff)))]]
        return (float(sel[:, 0].mean()), float(sel[:, 1].mean()))

    return TangentPair(
        vp=(vpx, vpy),
        l_min=Line.at_angle((vpx, vpy), theta_min),
        l_max=Line.at_angle((vpx, vpy), theta_max),
        theta_min=theta_min,
        theta_max=theta_max,
        touch_min=contact(theta_min),
        touch_max=contact(theta_max % math.pi),
    )


@dataclass(frozen=True)
class Box3D:
    """Eight image-space cuboid vertices (see module docstring for edges)."""

    a: ImagePoint
    b: ImagePoint
    c: ImagePoint
    d: ImagePoint
    e: ImagePoint
    f: ImagePoint
    g: ImagePoint
    h: ImagePoint

    V_EDGES = (("a", "b"), ("d", "c"), ("e", "f"), ("h", "g"))
    U_EDGES = (("a", "d"), ("b", "c"), ("f", "g"), ("e", "h"))
    W_EDGES = (("a", "e"), ("b", "f"), ("d", "h"), ("c", "g"))

    def vertex(self, name: str) -> ImagePoint:
        return getattr(self, name)

    def vertices(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d, self.e, self.f, self.g, self.h])


def _slope_key(line: Line) -> float:
    """Slope of a line for ordering; vertical lines rank above any finite
    slope (a vertical D->A ray counts as nonnegative in the face rule)."""
    dx, dy = line.direction
    if abs(dx) < VERTICAL_SLOPE_EPS * max(1.0, abs(dy)):
        return math.inf
    return dy / dx


def build_box(pair_u: TangentPair, pair_v: TangentPair, pair_w: TangentPair) -> Box3D:
    """Assemble the eight box vertices from the three tangent pairs.

    The six tangent lines bound the silhouette; consecutive lines around the
    hull intersect in the six directly observable corners. The cyclic order
    of the lines is recovered from their hull contact points, which fixes
    every role except the choice of U_max among the two u-tangents: that is
    taken as the larger-slope tangent, which makes the D->A slope rule in
    bottom_face select the road-contact face (the ground tangent has the
    larger slope exactly when its slope is nonnegative).

    The corner layout along the silhouette is D -[U_max]- A -[V_min]- B
    -[W_max]- F -[U_min]- G -[V_max]- H -[W_min]- D. E is reconstructed on
    the line A->w from whichever of the two candidate edge lines (F->v,
    H->u) puts it farther from A; the occluded vertex C closes the edge
    structure as line(B->u) x line(D->v), and its consistency with
    line(G->w) is logged when the three lines miss a common point by more
    than 2 px.

    Raises:
        DegenerateIntersection: when the silhouette has no valid six-line
            structure (e.g. a zero-area contour) or a required pair of
            lines is parallel within 1e-12.
    """
    entries = []
    for direction, pair in (("u", pair_u), ("v", pair_v), ("w", pair_w)):
        entries.append((direction, pair.l_min, pair.touch_min))
        entries.append((direction, pair.l_max, pair.touch_max))
    center = np.mean([t for _, _, t in entries], axis=0)
    entries.sort(key=lambda e: math.atan2(e[2][1] - center[1], e[2][0] - center[0]))
    ring = [d for d, _, _ in entries]
    for direction in ("u", "v", "w"):
        idx = [i for i, d in enumerate(ring) if d == direction]
        if len(idx) != 2 or (idx[1] - idx[0]) != 3:
            raise DegenerateIntersection(
                f"silhouette tangents do not alternate directions (ring {ring}); "
                "contour is degenerate for a cuboid"
            )

    u_idx = [i for i, d in enumerate(ring) if d == "u"]
    u_lines = [entries[i][1] for i in u_idx]
    if _slope_key(u_lines[0]) >= _slope_key(u_lines[1]):
        start = u_idx[0]
    else:
        start = u_idx[1]
    seq = [entries[(start + k) % 6][1] for k in range(6)]
    u_max = seq[0]
    if ring[(start + 1) % 6] == "v":
        v_min, w_max, u_min, v_max, w_min = seq[1], seq[2], seq[3], seq[4], seq[5]
    else:
        w_min, v_max, u_min, w_max, v_min = seq[1], seq[2], seq[3], seq[4], seq[5]

    a = line_intersection(u_max, v_min)
    b = line_intersection(v_min, w_max)
    d = line_intersection(u_max, w_min)
    f = line_intersection(u_min, w_max)
    g = line_intersection(v_max, u_min)
    h = line_intersection(v_max, w_min)

    line_aw = Line.through(a, pair_w.vp)
    e_f = line_intersection(Line.through(f, pair_v.vp), line_aw)
    e_h = line_intersection(Line.through(h, pair_u.vp), line_aw)
    if math.dist(a, e_f) >= math.dist(a, e_h):
        e = e_f
    else:
        e = e_h

    line_bu = Line.through(b, pair_u.vp)
    line_dv = Line.through(d, pair_v.vp)
    c = line_intersection(line_bu, line_dv)
    miss = line_point_distance(Line.through(g, pair_w.vp), c)
    if miss > CONSISTENCY_TOL_PX:
        logger.warning(
            "box vertex C misses the line G->w by %.2f px (> %.1f px): "
            "contour and vanishing points are inconsistent", miss, CONSISTENCY_TOL_PX,
        )

    return Box3D(
        a=ImagePoint(*a), b=ImagePoint(*b), c=ImagePoint(*c), d=ImagePoint(*d),
        e=ImagePoint(*e), f=ImagePoint(*f), g=ImagePoint(*g), h=ImagePoint(*h),
    )


def box_from_contour(contour: np.ndarray, camera: CameraCalibration) -> Box3D:
    """Simplify a contour and build its box against the camera's three
    vanishing points.

    Raises:
        DegenerateIntersection: when the contour encloses no area (fewer
            than three distinct convex-hull vertices), so no tangent wedge
            is defined.
    """
    simplified = simplify_contour(np.asarray(contour, dtype=float))
    if len(convex_hull(simplified)) < 3:
        raise DegenerateIntersection(
            f"contour has zero area ({len(simplified)} points after simplification)"
        )
    pair_u = tangent_lines(simplified, camera.u)
    pair_v = tangent_lines(simplified, camera.v)
    pair_w = tangent_lines(simplified, camera.w)
    return build_box(pair_u, pair_v, pair_w)


@dataclass(frozen=True)
class Quadrangle:
    """Simple quadrangle in plane coordinates; corners cyclic, (4, 2)."""

    corners: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.corners, dtype=float)
        if c.shape != (4, 2):
            raise ValueError(f"quadrangle needs 4 corner points, got shape {c.shape}")
        object.__setattr__(self, "corners", c)

    def translated(self, offset: Sequence[float]) -> "Quadrangle":
        return Quadrangle(self.corners + np.asarray(offset, dtype=float))

    def area(self) -> float:
        return abs(polygon_area(self.corners))

    def center(self) -> np.ndarray:
        return self.corners.mean(axis=0)


def bottom_face(box: Box3D) -> Tuple[str, ...]:
    """Names of the four vertices of the road-contact face.

    The face is chosen by the image slope of the ray D->A: nonnegative slope
    (or a vertical ray) selects A,B,C,D, negative slope selects H,G,F,E.
    """
    dx = box.a.x - box.d.x
    dy = box.a.y - box.d.y
    if abs(dx) < VERTICAL_SLOPE_EPS:
        return ("a", "b", "c", "d")
    return ("a", "b", "c", "d") if dy / dx >= 0 else ("h", "g", "f", "e")


def bottom_quadrangle(box: Box3D, camera: CameraCalibration, basis: PlaneBasis) -> Quadrangle:
    """Project the road-contact face onto the road plane.

    Returns the footprint as a plane-space quadrangle with corners in the
    cyclic order of the face traversal.
    """
    names = bottom_face(box)
    img = np.array([box.vertex(n) for n in names], dtype=float)
    world = _calib.project_points_to_plane(img, camera)
    plane = _calib.to_plane_coords_many(world, basis)
    return Quadrangle(plane)
