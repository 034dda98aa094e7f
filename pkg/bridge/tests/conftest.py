"""Shared fixtures built on the clip factory; session-scoped so the video
encoding and the default extraction run happen once."""

import json
from pathlib import Path

import pytest

from detector_bridge.config import load_config
from detector_bridge.extract import extract_detections

from clipfactory import VEHICLES, write_clip


@pytest.fixture(scope="session")
def traffic_clip(tmp_path_factory) -> tuple:
    """10 seconds of two vehicles crossing the frame, plus the annotation."""
    path = tmp_path_factory.mktemp("clips") / "traffic.avi"
    truth = write_clip(path, frames=500, vehicles=VEHICLES)
    return path, truth


@pytest.fixture(scope="session")
def background_clip(tmp_path_factory) -> Path:
    """2 seconds of nothing happening."""
    path = tmp_path_factory.mktemp("clips") / "background.avi"
    write_clip(path, frames=100)
    return path


@pytest.fixture(scope="session")
def extraction(traffic_clip, tmp_path_factory):
    """One default-config bridge run over the traffic clip, shared by all
    contract tests: (rows, summary, truth, jsonl path)."""
    clip, truth = traffic_clip
    out = tmp_path_factory.mktemp("extraction") / "detections.jsonl"
    summary = extract_detections(load_config({"video": str(clip), "out": str(out)}))
    rows = [json.loads(line) for line in open(out)]
    return rows, summary, truth, out
