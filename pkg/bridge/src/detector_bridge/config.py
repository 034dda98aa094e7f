"""Bridge configuration: one JSON object, validated up front."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

from detector_bridge.errors import BridgeConfigError

#: Classes the downstream pipeline accepts; class_map values must land here.
CANONICAL_CLASSES = ("car", "bus", "truck")

#: Effective frame rate the default stride aims for, frames per second.
TARGET_FPS = 25.0


@dataclass(frozen=True)
class BridgeConfig:
    """Everything one extraction run needs.

    ``detector`` and ``tracker`` name registered model seats (see the
    detectors and trackers modules). ``class_map`` translates detector
    labels into the canonical vehicle classes; detections whose label is
    not in the map are dropped. ``stride`` of None means "derive from the
    video's native frame rate so the effective rate is ~25 fps".
    """

    video: Path
    out: Path
    detector: str = "mog2"
    tracker: str = "iou"
    score_threshold: float = 0.5
    class_map: Dict[str, str] = field(default_factory=lambda: {"vehicle": "car"})
    stride: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.score_threshold <= 1.0:
            raise BridgeConfigError(
                f"score_threshold must lie in [0, 1], got {self.score_threshold}"
            )
        if self.stride is not None and (not isinstance(self.stride, int) or self.stride < 1):
            raise BridgeConfigError(f"stride must be a positive integer, got {self.stride!r}")
        for label, cls in self.class_map.items():
            if cls not in CANONICAL_CLASSES:
                raise BridgeConfigError(
                    f"class_map[{label!r}] = {cls!r} is not one of {CANONICAL_CLASSES}"
                )
        if not self.class_map:
            raise BridgeConfigError("class_map is empty; every detection would be dropped")


def load_config(source: Union[str, Path, dict], **overrides) -> BridgeConfig:
    """Build a BridgeConfig from a JSON file or an already-parsed dict.

    Keyword overrides (e.g. from CLI flags) win over file values; None
    overrides are ignored.
    """
    if isinstance(source, (str, Path)):
        try:
            raw = json.loads(Path(source).read_text())
        except OSError as exc:
            raise BridgeConfigError(f"cannot read config {source}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise BridgeConfigError(f"config {source} is not valid JSON: {exc}") from exc
    else:
        raw = dict(source)
    if not isinstance(raw, dict):
        raise BridgeConfigError(f"config root must be a JSON object, got {type(raw).__name__}")
    for key, value in overrides.items():
        if value is not None:
            raw[key] = value
    known = {f for f in BridgeConfig.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise BridgeConfigError(f"unknown config keys: {sorted(unknown)}")
    for required in ("video", "out"):
        if required not in raw:
            raise BridgeConfigError(f"config is missing required key {required!r}")
    raw["video"] = Path(raw["video"])
    raw["out"] = Path(raw["out"])
    try:
        return BridgeConfig(**raw)
    except TypeError as exc:
        raise BridgeConfigError(f"malformed config: {exc}") from exc
