"""Tracker seats: turn per-frame detections into stable track ids.

The "iou" seat is association plumbing, not a learned tracker: optimal
bounding-box IoU assignment between consecutive processed frames, new ids
for unmatched detections, tracks expiring after MAX_AGE unmatched steps.
The "none" seat attaches no ids at all, which hands identity management to
the downstream pipeline's own fallback tracker.
"""

from __future__ import annotations

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from detector_bridge.errors import BridgeConfigError

logger = logging.getLogger(__name__)

BBox = Tuple[float, float, float, float]  # x, y, w, h


def bbox_iou(a: BBox, b: BBox) -> float:
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    ix = min(ax0 + aw, bx0 + bw) - max(ax0, bx0)
    iy = min(ay0 + ah, by0 + bh) - max(ay0, by0)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (aw * ah + bw * bh - inter)


class IouTracker:
    """Greedy-free IoU association: one optimal assignment per step."""

    GATE = 0.1
    MAX_AGE = 12  # processed steps a track survives without a match

    def __init__(self):
        self._next_id = 1
        self._boxes: Dict[int, BBox] = {}
        self._missed: Dict[int, int] = {}

    def assign(self, bboxes: Sequence[BBox]) -> List[Optional[int]]:
        """Ids for this step's detections, in input order."""
        live = list(self._boxes)
        ids: List[Optional[int]] = [None] * len(bboxes)
        matched_tracks = set()
        if live and bboxes:
            iou = np.array(
                [[bbox_iou(self._boxes[t], det) for det in bboxes] for t in live]
            )
            rows, cols = linear_sum_assignment(-iou)
            for r, c in zip(rows, cols):
                if iou[r, c] >= self.GATE:
                    ids[c] = live[r]
                    matched_tracks.add(live[r])
        for i, det in enumerate(bboxes):
            if ids[i] is None:
                ids[i] = self._next_id
                self._next_id += 1
            self._boxes[ids[i]] = det
            self._missed[ids[i]] = 0
        for t in live:
            if t in matched_tracks:
                continue
            self._missed[t] += 1
            if self._missed[t] > self.MAX_AGE:
                del self._boxes[t], self._missed[t]
        return ids


class NoTracker:
    """Emit records without ids; the pipeline's own tracker takes over."""

    def assign(self, bboxes: Sequence[BBox]) -> List[Optional[int]]:
        return [None] * len(bboxes)


TRACKERS = {
    "iou": IouTracker,
    "none": NoTracker,
}


def make_tracker(name: str):
    try:
        seat = TRACKERS[name]
    except KeyError:
        raise BridgeConfigError(
            f"unknown tracker {name!r}, registered: {sorted(TRACKERS)}"
        ) from None
    logger.info("tracker seat: %s", name)
    return seat()
