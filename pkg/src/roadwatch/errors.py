"""Error taxonomy shared across the package.

Every failure mode that callers are expected to branch on gets its own class.
``DataError`` subclasses signal bad input data (CLI exit code 2), while
``ConfigError`` subclasses signal bad configuration (exit code 3).
"""


class RoadwatchError(Exception):
    """Base class for all package-specific errors."""


class DataError(RoadwatchError):
    """Input data is malformed or geometrically unusable."""


class ConfigError(RoadwatchError):
    """A configuration value is out of its documented domain."""


# --- calibration ---------------------------------------------------------

class AllParallel(DataError):
    """Line bundle has no stable intersection (near-parallel normal matrix)."""


class NonPhysical(DataError):
    """Vanishing-point pair is incompatible with a pinhole camera."""


class VerticalAtInfinity(DataError):
    """The third vanishing point lies at infinity (W_z ~ 0)."""


class HorizonPoint(DataError):
    """Image point whose back-projected ray never meets the road plane."""


# --- 3D box construction --------------------------------------------------

class EmptyMask(DataError):
    """Mask or contour contains no usable foreground."""


class VanishingPointInsideHull(DataError):
    """Tangent lines are undefined: the vanishing point is not strictly
    outside the contour's convex hull."""


class DegenerateIntersection(DataError):
    """Two lines that must intersect are parallel within tolerance."""


# --- kinematics -----------------------------------------------------------

class NonMonotonicFrame(DataError):
    """Track update with a frame number <= the last one seen."""


class InsufficientHistory(DataError):
    """Track does not yet carry enough history for the requested output."""


# --- danger maps ----------------------------------------------------------

class GridTooSmall(ConfigError):
    """Grid does not cover the footprint plus the 4-sigma kernel support."""


class GridMismatch(DataError):
    """Heat maps on different grids cannot be combined."""


# --- pipeline / simulator -------------------------------------------------

class StaleFrame(DataError):
    """Frame arrived out of order for the stream."""


class BehindCamera(DataError):
    """World point at or behind the focal plane cannot be projected."""


class EmptyMatches(DataError):
    """Metric requested over an empty match set."""
