"""Fixtures over the shared scene factory (poses, cameras, scenarios)."""

import pytest

from roadwatch import calib as _calib

from scenefactory import CAMERA_POSES, camera_for


@pytest.fixture
def hand_camera():
    """The small calibration whose every derived quantity is known by hand."""
    return _calib.derive_camera(u=(3.0, 1.0), v=(-1.0, 1.0), c=(0.0, 0.0), d=10.0, lam=1.0)


@pytest.fixture(params=range(len(CAMERA_POSES)), ids=lambda i: f"pose{i}")
def posed_camera(request):
    return camera_for(CAMERA_POSES[request.param])
