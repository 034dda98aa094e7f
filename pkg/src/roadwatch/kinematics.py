"""Track state, velocity estimation and short-horizon prediction.

All positions are plane coordinates (s, t); metric quantities carry a
``_m`` / ``_kmh`` suffix and use the calibration scale lambda.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from roadwatch.box3d import Quadrangle
from roadwatch.errors import InsufficientHistory, NonMonotonicFrame

logger = logging.getLogger(__name__)

DEFAULT_DELTA = 0.86
DEFAULT_SIGMA0_M = 0.1
DEFAULT_SIGMA_RATE_M = 0.05


def center(footprint: Quadrangle) -> np.ndarray:
    """Footprint reference point: the mean of the four corners."""
    return footprint.corners.mean(axis=0)


def speed_kmh(velocity: Sequence[float], lam: float) -> float:
    """Plane-units-per-second velocity to km/h via the metric scale."""
    v = np.asarray(velocity, dtype=float)
    return float(np.linalg.norm(v)) * lam * 3.6


@dataclass
class TrackState:
    """Per-vehicle filter state; updates are strictly sequential per track.

    ``v_r`` is the raw frame-difference velocity, ``v_s`` its exponential
    smoothing (initialized to the first ``v_r``). Both are plane units per
    second.
    """

    track_id: int
    frames: List[int] = field(default_factory=list)
    centers: List[np.ndarray] = field(default_factory=list)
    footprint: Optional[Quadrangle] = None
    v_r: Optional[np.ndarray] = None
    v_s: Optional[np.ndarray] = None

    @property
    def last_frame(self) -> Optional[int]:
        return self.frames[-1] if self.frames else None

    @property
    def history_length(self) -> int:
        return len(self.frames)


def update_track(
    track: TrackState,
    footprint: Quadrangle,
    frame_no: int,
    fps: float,
    delta: float = DEFAULT_DELTA,
) -> TrackState:
    """Fold one footprint observation into the track.

    v_r = (c_t - c_t') * fps / (t - t')   (gap-aware frame difference)
    v_s = delta * v_s_prev + (1 - delta) * v_r

    Raises:
        NonMonotonicFrame: when frame_no is not strictly greater than the
            last update's frame.
    """
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    if not 0.0 <= delta < 1.0:
        raise ValueError(f"smoothing delta must lie in [0, 1), got {delta}")
    if track.last_frame is not None and frame_no <= track.last_frame:
        raise NonMonotonicFrame(
            f"track {track.track_id}: frame {frame_no} after frame {track.last_frame}"
        )
    c = center(footprint)
    if track.frames:
        gap = frame_no - track.frames[-1]
        v_r = (c - track.centers[-1]) * (fps / gap)
        track.v_r = v_r
        track.v_s = v_r if track.v_s is None else delta * track.v_s + (1.0 - delta) * v_r
    track.frames.append(int(frame_no))
    track.centers.append(c)
    track.footprint = footprint
    return track


@dataclass(frozen=True)
class Prediction:
    """Forecast of one track at a single horizon.

    ``acceleration`` is part of the snapshot contract but the deployed
    predictor always emits zero (constant-velocity model).
    """

    t_offset: float
    center: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    speed_kmh: float
    variance_m2: float
    footprint: Quadrangle


def predict(
    track: TrackState,
    horizons: Sequence[float],
    fps: float,
    lam: float,
    sigma0_m: float = DEFAULT_SIGMA0_M,
    sigma_rate_m: float = DEFAULT_SIGMA_RATE_M,
) -> List[Prediction]:
    """Constant-velocity forecasts at the given horizons (seconds).

    The positional uncertainty is configuration, not physics: the standard
    deviation grows linearly with the number of frame slots ahead,
    sigma = sigma0 + sigma_rate * (tau * fps), and variance = sigma^2.

    Raises:
        InsufficientHistory: before two observations exist (no velocity yet).
    """
    if track.v_s is None or track.footprint is None:
        raise InsufficientHistory(
            f"track {track.track_id} has {track.history_length} observation(s); "
            "need at least 2 for a velocity"
        )
    out = []
    c_now = track.centers[-1]
    for tau in horizons:
        if tau < 0:
            raise ValueError(f"prediction horizon must be nonnegative, got {tau}")
        offset = track.v_s * tau
        sigma_m = sigma0_m + sigma_rate_m * (tau * fps)
        out.append(
            Prediction(
                t_offset=float(tau),
                center=c_now + offset,
                velocity=track.v_s.copy(),
                acceleration=np.zeros(2),
                speed_kmh=speed_kmh(track.v_s, lam),
                variance_m2=sigma_m * sigma_m,
                footprint=track.footprint.translated(offset),
            )
        )
    return out
