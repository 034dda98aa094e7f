"""Proximity alerts, probabilistic heat maps and danger maps.

Distances between footprints follow the closed-form quadrangle distance:
zero when the quadrangles share any point, otherwise the minimum over the 32
vertex-to-edge candidates (each vertex of one quadrangle against each edge
of the other, both ways).

Heat maps discretize "where will this vehicle be": the footprint indicator
rasterized on a plane-space grid, convolved with a discretized Gaussian
(sigma = predicted position uncertainty; kernel truncated at 4 sigma and
renormalized). The danger map is the per-cell probability that two or more
vehicles occupy the cell, treating per-vehicle heat maps as independent:

    danger = 1 - prod(1 - p_i) - sum_i p_i * prod_{j != i} (1 - p_j)
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import fftconvolve
from scipy.stats import norm

from roadwatch.box3d import Quadrangle
from roadwatch.errors import GridMismatch, GridTooSmall
from roadwatch.geometry import point_in_polygon, points_in_polygon, segments_intersect

logger = logging.getLogger(__name__)

KERNEL_TRUNCATION_SIGMAS = 4.0


def point_edge_distance(p: Sequence[float], a: Sequence[float], b: Sequence[float]) -> float:
    """Distance from point ``p`` to the closed segment ``a``-``b``."""
    px, py = float(p[0]), float(p[1])
    ax, ay = float(a[0]), float(a[1])
    bx, by = float(b[0]), float(b[1])
    dx, dy = bx - ax, by - ay
    seg2 = dx * dx + dy * dy
    if seg2 == 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * dx + (py - ay) * dy) / seg2
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def quads_touch(q1: Quadrangle, q2: Quadrangle) -> bool:
    """True when the quadrangles intersect, touch, or one contains the other."""
    c1, c2 = q1.corners, q2.corners
    for i in range(4):
        for j in range(4):
            if segments_intersect(c1[i], c1[(i + 1) % 4], c2[j], c2[(j + 1) % 4]):
                return True
    return point_in_polygon(c1[0], c2) or point_in_polygon(c2[0], c1)


def quad_distance(q1: Quadrangle, q2: Quadrangle) -> float:
    """Minimum distance between two quadrangles in plane units.

    Zero exactly when they intersect, touch, or one contains the other;
    otherwise the minimum over the 32 vertex-to-edge candidates.
    """
    if quads_touch(q1, q2):
        return 0.0
    best = math.inf
    for qa, qb in ((q1, q2), (q2, q1)):
        for v in qa.corners:
            for j in range(4):
                d = point_edge_distance(v, qb.corners[j], qb.corners[(j + 1) % 4])
                if d < best:
                    best = d
    return best


@dataclass(frozen=True)
class ProximityAlert:
    frame_no: int
    track_a: int
    track_b: int
    distance_m: float
    threshold_m: float


def proximity_alerts(
    footprints: Sequence[Tuple[int, Quadrangle]],
    threshold_m: float,
    lam: float,
    frame_no: int = 0,
) -> List[ProximityAlert]:
    """All vehicle pairs closer than ``threshold_m`` meters this frame.

    Pairs are emitted in sorted track-id order (a < b), deterministically.
    """
    if threshold_m <= 0:
        raise ValueError(f"alert threshold must be positive, got {threshold_m}")
    items = sorted(footprints, key=lambda kv: kv[0])
    alerts = []
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            dist_m = lam * quad_distance(items[i][1], items[j][1])
            if dist_m < threshold_m:
                alerts.append(
                    ProximityAlert(
                        frame_no=frame_no,
                        track_a=items[i][0],
                        track_b=items[j][0],
                        distance_m=dist_m,
                        threshold_m=threshold_m,
                    )
                )
    return alerts


@dataclass(frozen=True)
class GridSpec:
    """Plane-space raster: origin at the (s, t) corner of cell (0, 0)."""

    origin_s: float
    origin_t: float
    cell_size: float
    n_s: int
    n_t: int

    def __post_init__(self):
        if self.cell_size <= 0 or self.n_s <= 0 or self.n_t <= 0:
            raise ValueError(
                f"grid needs positive cell size and shape, got "
                f"cell={self.cell_size}, shape=({self.n_s}, {self.n_t})"
            )

    def cell_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        s = self.origin_s + (np.arange(self.n_s) + 0.5) * self.cell_size
        t = self.origin_t + (np.arange(self.n_t) + 0.5) * self.cell_size
        return s, t

    def bounds(self) -> Tuple[float, float, float, float]:
        return (
            self.origin_s,
            self.origin_t,
            self.origin_s + self.n_s * self.cell_size,
            self.origin_t + self.n_t * self.cell_size,
        )


@dataclass(frozen=True)
class Snapshot:
    """A footprint with positional uncertainty at one prediction horizon."""

    track_id: int
    footprint: Quadrangle
    sigma: float  # plane units
    t_offset: float


@dataclass(frozen=True)
class HeatMap:
    grid: GridSpec
    t_offset: float
    track_id: int
    cells: np.ndarray  # (n_s, n_t), values in [0, 1]


@dataclass(frozen=True)
class DangerMap:
    grid: GridSpec
    t_offset: float
    cells: np.ndarray


def _gaussian_kernel(sigma: float, cell: float) -> np.ndarray:
    """Separable discretized Gaussian: per-cell integrated mass, truncated
    at 4 sigma and renormalized to sum 1."""
    radius = int(math.ceil(KERNEL_TRUNCATION_SIGMAS * sigma / cell))
    edges = (np.arange(-radius, radius + 1 + 1) - 0.5) * cell
    k1 = np.diff(norm.cdf(edges, scale=sigma))
    k1 /= k1.sum()
    return np.outer(k1, k1)


def vehicle_heatmap(snapshot: Snapshot, grid: GridSpec) -> HeatMap:
    """Per-cell probability that the cell center is covered by the footprint
    under a Gaussian positional error of the snapshot's sigma.

    With sigma = 0 this degenerates to the footprint indicator (cells whose
    center lies inside the footprint).

    Raises:
        GridTooSmall: when the grid does not cover the footprint dilated by
            the 4-sigma kernel support.
    """
    fp = snapshot.footprint.corners
    margin = KERNEL_TRUNCATION_SIGMAS * snapshot.sigma
    s0, t0, s1, t1 = grid.bounds()
    if (
        fp[:, 0].min() - margin < s0
        or fp[:, 0].max() + margin > s1
        or fp[:, 1].min() - margin < t0
        or fp[:, 1].max() + margin > t1
    ):
        raise GridTooSmall(
            f"grid [{s0:.2f},{s1:.2f}]x[{t0:.2f},{t1:.2f}] does not cover footprint "
            f"[{fp[:, 0].min():.2f},{fp[:, 0].max():.2f}]x[{fp[:, 1].min():.2f},{fp[:, 1].max():.2f}] "
            f"plus {margin:.2f} kernel margin"
        )
    s_centers, t_centers = grid.cell_centers()
    ss, tt = np.meshgrid(s_centers, t_centers, indexing="ij")
    pts = np.stack([ss.ravel(), tt.ravel()], axis=1)
    indicator = points_in_polygon(pts, fp).reshape(grid.n_s, grid.n_t).astype(float)
    if snapshot.sigma <= 0.0:
        cells = indicator
    else:
        kernel = _gaussian_kernel(snapshot.sigma, grid.cell_size)
        cells = fftconvolve(indicator, kernel, mode="same")
        np.clip(cells, 0.0, 1.0, out=cells)
    return HeatMap(grid=grid, t_offset=snapshot.t_offset, track_id=snapshot.track_id, cells=cells)


def danger_map(heatmaps: Sequence[HeatMap]) -> DangerMap:
    """Probability per cell that two or more vehicles occupy it.

    Raises:
        GridMismatch: when the heat maps disagree on grid or horizon.
    """
    if not heatmaps:
        raise ValueError("danger_map needs at least one heat map")
    grid = heatmaps[0].grid
    t_offset = heatmaps[0].t_offset
    for hm in heatmaps[1:]:
        if hm.grid != grid or hm.t_offset != t_offset:
            raise GridMismatch(
                f"heat map for track {hm.track_id} is on grid {hm.grid} at horizon "
                f"{hm.t_offset}, expected {grid} at {t_offset}"
            )
    probs = np.stack([hm.cells for hm in heatmaps])
    none_of = np.prod(1.0 - probs, axis=0)
    exactly_one = np.zeros_like(none_of)
    for i in range(len(probs)):
        others = np.prod(np.delete(1.0 - probs, i, axis=0), axis=0) if len(probs) > 1 else np.ones_like(none_of)
        exactly_one += probs[i] * others
    cells = 1.0 - none_of - exactly_one
    np.clip(cells, 0.0, 1.0, out=cells)
    return DangerMap(grid=grid, t_offset=t_offset, cells=cells)


def write_pgm(cells: np.ndarray, path: Union[str, Path]) -> None:
    """8-bit binary PGM (P5): value = round(255 * p), rows along s."""
    arr = np.asarray(cells, dtype=float)
    data = np.rint(255.0 * np.clip(arr, 0.0, 1.0)).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    """Read back a P5 raster written by write_pgm; returns uint8 (rows, cols)."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ValueError(f"{path}: not a binary PGM (magic {magic!r})")
        dims = fh.readline().split()
        width, height = int(dims[0]), int(dims[1])
        maxval = int(fh.readline())
        if maxval != 255:
            raise ValueError(f"{path}: expected maxval 255, got {maxval}")
        data = np.frombuffer(fh.read(width * height), dtype=np.uint8)
    return data.reshape(height, width)


def map_sidecar(m: Union[HeatMap, DangerMap]) -> dict:
    """JSON-serializable grid metadata for a written raster."""
    meta = {
        "origin": [m.grid.origin_s, m.grid.origin_t],
        "cell_size": m.grid.cell_size,
        "shape": [m.grid.n_s, m.grid.n_t],
        "t_offset": m.t_offset,
    }
    if isinstance(m, HeatMap):
        meta["track_id"] = m.track_id
    return meta


def save_map(m: Union[HeatMap, DangerMap], pgm_path: Union[str, Path]) -> None:
    """Write raster + JSON sidecar (same stem, .json suffix)."""
    pgm_path = Path(pgm_path)
    write_pgm(m.cells, pgm_path)
    with open(pgm_path.with_suffix(".json"), "w") as fh:
        json.dump(map_sidecar(m), fh)
        fh.write("\n")
