"""Small planar-geometry helpers shared by the box and danger modules.

Everything here works on plain floats / numpy arrays; domain types live with
the modules that own them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from roadwatch.errors import DegenerateIntersection

PARALLEL_EPS = 1e-12


@dataclass(frozen=True)
class Line:
    """Infinite 2D line through ``point`` with unit ``direction``."""

    point: Tuple[float, float]
    direction: Tuple[float, float]

    @staticmethod
    def through(a: Sequence[float], b: Sequence[float]) -> "Line":
        dx, dy = b[0] - a[0], b[1] - a[1]
        norm = float(np.hypot(dx, dy))
        if norm == 0.0:
            raise DegenerateIntersection(f"cannot build a line through coincident points {tuple(a)}")
        return Line((float(a[0]), float(a[1])), (dx / norm, dy / norm))

    @staticmethod
    def at_angle(point: Sequence[float], theta: float) -> "Line":
        return Line((float(point[0]), float(point[1])), (float(np.cos(theta)), float(np.sin(theta))))


def cross2(ax: float, ay: float, bx: float, by: float) -> float:
    return ax * by - ay * bx


def line_intersection(l1: Line, l2: Line) -> Tuple[float, float]:
    """Intersection point of two lines.

    Raises DegenerateIntersection when the directions are parallel within
    1e-12 (the cross product of the unit directions).
    """
    d1x, d1y = l1.direction
    d2x, d2y = l2.direction
    denom = cross2(d1x, d1y, d2x, d2y)
    if abs(denom) < PARALLEL_EPS:
        raise DegenerateIntersection(
            f"lines are parallel within {PARALLEL_EPS:g} (directions {l1.direction} and {l2.direction})"
        )
    px, py = l1.point
    qx, qy = l2.point
    t = cross2(qx - px, qy - py, d2x, d2y) / denom
    return (px + t * d1x, py + t * d1y)


def line_point_distance(line: Line, p: Sequence[float]) -> float:
    """Perpendicular distance from ``p`` to ``line``."""
    dx, dy = line.direction
    return abs(cross2(dx, dy, p[0] - line.point[0], p[1] - line.point[1]))


def convex_hull(points: Iterable[Sequence[float]]) -> List[Tuple[float, float]]:
    """Convex hull by monotone chain, counterclockwise in (x, y) order.

    Collinear interior points are dropped. Degenerate inputs (all points
    coincident or collinear) return the reduced hull (1 or 2 points).
    """
    pts = sorted({(float(p[0]), float(p[1])) for p in points})
    if len(pts) <= 2:
        return pts

    def build(seq):
        chain: List[Tuple[float, float]] = []
        for p in seq:
            while len(chain) >= 2 and cross2(
                chain[-1][0] - chain[-2][0], chain[-1][1] - chain[-2][1],
                p[0] - chain[-2][0], p[1] - chain[-2][1],
            ) <= 0:
                chain.pop()
            chain.append(p)
        return chain

    lower = build(pts)
    upper = build(reversed(pts))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:  # all collinear
        return [pts[0], pts[-1]]
    return hull


def polygon_area(vertices: np.ndarray) -> float:
    """Signed shoelace area of a polygon given as an (n, 2) array."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def point_in_polygon(p: Sequence[float], vertices: np.ndarray, include_boundary: bool = True) -> bool:
    """Even-odd containment test; boundary points count as inside by default."""
    v = np.asarray(vertices, dtype=float)
    n = len(v)
    px, py = float(p[0]), float(p[1])
    inside = False
    for i in range(n):
        ax, ay = v[i]
        bx, by = v[(i + 1) % n]
        if _on_segment(px, py, ax, ay, bx, by):
            return include_boundary
        if (ay > py) != (by > py):
            x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
            if px < x_cross:
                inside = not inside
    return inside


def points_in_polygon(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Vectorized even-odd test for an (m, 2) array of query points.

    Boundary handling follows the crossing rule (half-open edges), which is
    adequate for raster-center tests; use point_in_polygon for exact
    boundary-inclusive queries.
    """
    pts = np.asarray(points, dtype=float)
    v = np.asarray(vertices, dtype=float)
    px = pts[:, 0][:, None]
    py = pts[:, 1][:, None]
    ax, ay = v[:, 0][None, :], v[:, 1][None, :]
    bx = np.roll(v[:, 0], -1)[None, :]
    by = np.roll(v[:, 1], -1)[None, :]
    straddles = (ay > py) != (by > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
    crossings = straddles & (px < x_cross)
    return (np.count_nonzero(crossings, axis=1) % 2).astype(bool)


def _on_segment(px, py, ax, ay, bx, by, eps: float = 0.0) -> bool:
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    if abs(cross) > max(eps, 1e-12 * max(abs(bx - ax), abs(by - ay), 1.0)):
        return False
    dot = (px - ax) * (bx - ax) + (py - ay) * (by - ay)
    return -1e-12 <= dot <= (bx - ax) ** 2 + (by - ay) ** 2 + 1e-12


def segments_intersect(p1, p2, q1, q2) -> bool:
    """True when closed segments [p1, p2] and [q1, q2] share a point."""

    def orient(a, b, c):
        val = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if val > 0:
            return 1
        if val < 0:
            return -1
        return 0

    o1 = orient(p1, p2, q1)
    o2 = orient(p1, p2, q2)
    o3 = orient(q1, q2, p1)
    o4 = orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and _on_segment(q1[0], q1[1], p1[0], p1[1], p2[0], p2[1]):
        return True
    if o2 == 0 and _on_segment(q2[0], q2[1], p1[0], p1[1], p2[0], p2[1]):
        return True
    if o3 == 0 and _on_segment(p1[0], p1[1], q1[0], q1[1], q2[0], q2[1]):
        return True
    if o4 == 0 and _on_segment(p2[0], p2[1], q1[0], q1[1], q2[0], q2[1]):
        return True
    return False
