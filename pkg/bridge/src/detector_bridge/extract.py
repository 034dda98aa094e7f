"""The extraction loop: video in, canonical detections JSONL out."""

from __future__ import annotations

import json
import logging
import math
from typing import List, Optional

import cv2
import numpy as np

from detector_bridge.config import TARGET_FPS, BridgeConfig
from detector_bridge.detectors import make_detector
from detector_bridge.errors import VideoError
from detector_bridge.trackers import make_tracker

logger = logging.getLogger(__name__)

#: Polygon simplification tolerance for emitted contours, pixels.
CONTOUR_EPS_PX = 1.5


def mask_to_contour(mask: np.ndarray) -> Optional[np.ndarray]:
    """Largest outer border of a boolean instance mask, as an (n, 2) polygon.

    Mirrors the downstream pipeline's mask-to-contour semantics: only outer
    borders are considered and the largest one (by enclosed area) wins, so
    holes and detached specks inside an instance never change its outline.
    Returns None when the mask has no usable border (fewer than 3 points).
    """
    contours, _ = cv2.findContours(
        mask.astype(np.uint8), cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_SIMPLE
    )
    if not contours:
        return None
    border = max(contours, key=cv2.contourArea)
    poly = cv2.approxPolyDP(border, CONTOUR_EPS_PX, closed=True).reshape(-1, 2)
    if len(poly) < 3:
        return None
    return poly.astype(float)


def native_fps_of(cap: cv2.VideoCapture) -> float:
    fps = cap.get(cv2.CAP_PROP_FPS)
    if not math.isfinite(fps) or fps <= 0:
        logger.warning("video reports no frame rate; assuming %g fps", TARGET_FPS)
        return TARGET_FPS
    return fps


def extract_detections(cfg: BridgeConfig) -> dict:
    """Run the configured seats over the video and write detections JSONL.

    Frames are sampled at the configured stride (default: whatever brings
    the native rate down to ~25 fps) and records carry the video's native
    frame index, so downstream velocity estimation against the native fps
    stays correct. Only sampled frames feed the detector. A frame whose
    inference raises is logged and skipped; the stream stays valid.

    Returns a small summary dict (also what the CLI prints).

    Raises:
        VideoError: the file cannot be opened as video.
        BridgeConfigError: unknown detector or tracker seat.
    """
    detector = make_detector(cfg.detector)
    tracker = make_tracker(cfg.tracker)
    cap = cv2.VideoCapture(str(cfg.video))
    if not cap.isOpened():
        raise VideoError(f"cannot open video {cfg.video}")
    try:
        native_fps = native_fps_of(cap)
        stride = cfg.stride if cfg.stride is not None else max(1, round(native_fps / TARGET_FPS))
        logger.info("%s: native %g fps, stride %d", cfg.video, native_fps, stride)

        rows: List[dict] = []
        frames_processed = 0
        index = 0
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            frame_no, index = index, index + 1
            if frame_no % stride:
                continue
            frames_processed += 1
            try:
                instances = detector.detect(frame)
            except Exception:
                logger.exception("frame %d: inference failed, skipping", frame_no)
                continue
            frame_rows = []
            for inst in instances:
                if inst.score < cfg.score_threshold:
                    continue
                cls = cfg.class_map.get(inst.label)
                if cls is None:
                    logger.debug("frame %d: label %r not mapped, dropped", frame_no, inst.label)
                    continue
                contour = mask_to_contour(inst.mask)
                if contour is None:
                    logger.debug("frame %d: instance without usable border, dropped", frame_no)
                    continue
                x, y, w, h = (float(v) for v in cv2.boundingRect(contour.astype(np.int32)))
                frame_rows.append(
                    {
                        "frame": frame_no,
                        "class": cls,
                        "score": round(inst.score, 4),
                        "bbox": [x, y, w, h],
                        "contour": contour.tolist(),
                    }
                )
            ids = tracker.assign([tuple(r["bbox"]) for r in frame_rows])
            for row, track_id in zip(frame_rows, ids):
                if track_id is not None:
                    row["track_id"] = track_id
            rows.extend(frame_rows)
    finally:
        cap.release()

    cfg.out.parent.mkdir(parents=True, exist_ok=True)
    with open(cfg.out, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    summary = {
        "video": str(cfg.video),
        "native_fps": native_fps,
        "stride": stride,
        "frames_processed": frames_processed,
        "records": len(rows),
        "out": str(cfg.out),
    }
    logger.info("wrote %d records over %d frames to %s", len(rows), frames_processed, cfg.out)
    return summary
