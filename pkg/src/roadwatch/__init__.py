"""Traffic danger recognition from a single fixed camera.

The package turns per-frame vehicle detections (2D contours in image space)
into metric plane-space footprints, tracks and short-horizon predictions, and
derives pairwise proximity alerts plus per-cell danger maps.
"""

__version__ = "0.1.0"
