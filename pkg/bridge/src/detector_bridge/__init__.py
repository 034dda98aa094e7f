"""Video-to-detections bridge for the roadwatch pipeline.

Runs pluggable detector and tracker seats over a video file and writes the
canonical detections JSONL that ``roadwatch run`` consumes. The bridge only
ever talks to the pipeline through that file contract.
"""

from detector_bridge.config import BridgeConfig, load_config
from detector_bridge.errors import BridgeConfigError, BridgeError, VideoError
from detector_bridge.extract import extract_detections

__version__ = "0.1.0"

__all__ = [
    "BridgeConfig",
    "BridgeConfigError",
    "BridgeError",
    "VideoError",
    "extract_detections",
    "load_config",
]
