"""Detector seats: per-frame instance segmentation behind a tiny interface.

A seat is anything with ``detect(frame_bgr) -> list[Instance]``. The default
seat wraps OpenCV's MOG2 background subtractor, which needs no downloaded
weights and works on any stationary-camera clip: foreground blobs become
instances labeled "vehicle". A Mask R-CNN style seat would register here the
same way and emit its own class labels; the config's class_map decides what
survives either way.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Type

import cv2
import numpy as np

from detector_bridge.errors import BridgeConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Instance:
    """One segmented object in one frame."""

    mask: np.ndarray  # bool (H, W)
    label: str
    score: float


class Mog2Segmenter:
    """Moving-object segmentation via MOG2 background modeling.

    The subtractor marks hard foreground 255 and shadows 127; everything
    below SHADOW_CUTOFF is discarded so shadows never become detections.
    The mask is cleaned with an elliptical open/close, split into connected
    components, and each component at least MIN_BLOB_PX pixels becomes an
    instance. MOG2 has no notion of confidence, so the score is the
    component's fill ratio inside its bounding box: compact solid blobs
    score near 1, ragged speckle scores low and falls to the threshold.
    """

    LABEL = "vehicle"
    MIN_BLOB_PX = 150
    SHADOW_CUTOFF = 200
    HISTORY = 300
    VAR_THRESHOLD = 16.0

    def __init__(self):
        self._subtractor = cv2.createBackgroundSubtractorMOG2(
            history=self.HISTORY, varThreshold=self.VAR_THRESHOLD, detectShadows=True
        )
        self._kernel = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (5, 5))

    def detect(self, frame: np.ndarray) -> List[Instance]:
        raw = self._subtractor.apply(frame)
        fg = (raw >= self.SHADOW_CUTOFF).astype(np.uint8)
        fg = cv2.morphologyEx(fg, cv2.MORPH_OPEN, self._kernel)
        fg = cv2.morphologyEx(fg, cv2.MORPH_CLOSE, self._kernel)
        n, labels, stats, _ = cv2.connectedComponentsWithStats(fg, connectivity=8)
        instances = []
        for i in range(1, n):
            x, y, w, h, area = (int(v) for v in stats[i])
            if area < self.MIN_BLOB_PX:
                continue
            score = min(1.0, area / float(w * h))
            instances.append(Instance(mask=labels == i, label=self.LABEL, score=score))
        return instances


DETECTORS: Dict[str, Type] = {
    "mog2": Mog2Segmenter,
}


def make_detector(name: str):
    try:
        seat = DETECTORS[name]
    except KeyError:
        raise BridgeConfigError(
            f"unknown detector {name!r}, registered: {sorted(DETECTORS)}"
        ) from None
    logger.info("detector seat: %s", name)
    return seat()
