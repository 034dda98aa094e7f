"""Forward projection, scenario loading, and synthetic stream generation.

The simulator is the oracle route for most geometry tests, so its own tests
stick to internal consistency: closed-form kinematics, projection
roundtrips, seeded determinism, and truth/detection agreement.
"""

import json

import numpy as np
import pytest

from roadwatch import calib as _calib
from roadwatch import simulate as sim
from roadwatch.errors import BehindCamera

from scenefactory import CAMERA_POSES, FPS, camera_for, make_scenario, plane_anchor

RNG = np.random.default_rng(20240813)


# ── forward projection ──────────────────────────────────────────────────────

def test_optical_axis_projects_to_principal_point(posed_camera):
    for depth in (1.0, 5.0, 80.0):
        p = posed_camera.C + np.array([0.0, 0.0, depth])
        img = sim.forward_project(p, posed_camera)
        assert img.x == pytest.approx(posed_camera.c.x, abs=1e-9)
        assert img.y == pytest.approx(posed_camera.c.y, abs=1e-9)


def test_behind_camera_rejected(posed_camera):
    with pytest.raises(BehindCamera):
        sim.forward_project(posed_camera.C + np.array([0.0, 0.0, -2.0]), posed_camera)
    with pytest.raises(BehindCamera):
        sim.forward_project(posed_camera.C, posed_camera)
    pts = np.array(
        [posed_camera.C + [0, 0, 10.0], posed_camera.C + [1.0, 1.0, -5.0]]
    )
    with pytest.raises(BehindCamera):
        sim.forward_project_many(pts, posed_camera)


def test_projection_roundtrip_through_plane(posed_camera):
    basis = _calib.plane_basis(posed_camera)
    sc, tc, _ = plane_anchor(posed_camera)
    for _ in range(20):
        st = np.array([sc, tc]) + RNG.uniform(-8, 8, size=2) / posed_camera.lam
        world = _calib.plane_to_world(st, posed_camera, basis)
        img = sim.forward_project(world, posed_camera)
        back = _calib.project_to_plane((img.x, img.y), posed_camera)
        assert np.allclose(back, world, atol=1e-9 * max(1.0, np.abs(world).max()))


# ── camera_from_pose ────────────────────────────────────────────────────────

def test_zero_yaw_rejected():
    with pytest.raises(ValueError):
        sim.camera_from_pose(f_px=1400.0, pitch_deg=-28.0, yaw_deg=0.0, height_m=9.0)


def test_lambda_scales_with_mounting_height():
    lo = sim.camera_from_pose(f_px=1400.0, pitch_deg=-28.0, yaw_deg=12.0, height_m=9.0)
    hi = sim.camera_from_pose(f_px=1400.0, pitch_deg=-28.0, yaw_deg=12.0, height_m=18.0)
    assert hi["lambda"] == pytest.approx(2.0 * lo["lambda"])
    assert hi["u"] == lo["u"] and hi["v"] == lo["v"]


def test_pose_vanishing_points_are_finite_and_distinct():
    for pose in CAMERA_POSES:
        cam = sim.camera_from_pose(image_size=(1920, 1080), **pose)
        u, v = np.array(cam["u"]), np.array(cam["v"])
        assert np.isfinite(u).all() and np.isfinite(v).all()
        assert np.linalg.norm(u - v) > 100.0


# ── vehicle kinematics and footprints ───────────────────────────────────────

def test_vehicle_state_closed_form():
    veh = sim.VehicleSpec(
        vehicle_id=1, dims_m=(4.5, 1.8, 1.5), position=(1.0, 2.0),
        velocity=(3.0, -1.0), acceleration=(0.5, 0.25),
    )
    center, velocity = sim.vehicle_state(veh, tau=2.0)
    assert np.allclose(center, [1.0 + 6.0 + 1.0, 2.0 - 2.0 + 0.5])
    assert np.allclose(velocity, [4.0, -0.5])


def test_footprint_dimensions_and_orientation():
    fp = sim.footprint_corners(np.array([10.0, 20.0]), (4.5, 1.8, 1.5), lam=2.0)
    assert fp.shape == (4, 2)
    # width across s, length along t, both divided by the metric scale
    assert fp[:, 0].max() - fp[:, 0].min() == pytest.approx(0.9)
    assert fp[:, 1].max() - fp[:, 1].min() == pytest.approx(2.25)
    assert fp.mean(axis=0) == pytest.approx([10.0, 20.0])


# ── simulate: truth stream ──────────────────────────────────────────────────

def one_car_scenario(**kw):
    defaults = dict(
        pose=CAMERA_POSES[0],
        vehicles_m=[{"id": 1, "pos": (0.0, -10.0), "vel": (0.0, 10.0)}],
        duration_frames=20,
    )
    defaults.update(kw)
    return sim.load_scenario(make_scenario(**defaults))


def state_rows(truth, vehicle=None):
    return [
        r for r in truth
        if r["type"] == "state" and (vehicle is None or r["vehicle"] == vehicle)
    ]


def test_meta_row_leads_truth_stream():
    _, truth = sim.simulate(one_car_scenario(), seed=3)
    meta = truth[0]
    assert meta["type"] == "meta"
    assert meta["fps"] == FPS
    assert meta["seed"] == 3
    assert meta["duration_frames"] == 20
    cam = _calib.load_calibration(meta["calibration"])
    assert cam.lam == pytest.approx(meta["lambda"])


def test_constant_velocity_truth_centers_equally_spaced():
    _, truth = sim.simulate(one_car_scenario(), seed=0)
    centers = np.array([r["center"] for r in state_rows(truth, vehicle=1)])
    assert len(centers) == 20
    steps = np.diff(centers, axis=0)
    assert np.allclose(steps, steps[0], atol=1e-12)
    # collinear: every step parallel to the first
    cross = steps[:, 0] * steps[0, 1] - steps[:, 1] * steps[0, 0]
    assert np.abs(cross).max() <= 1e-12


def test_truth_speed_matches_central_difference():
    # quadratic trajectories make the central difference exact
    scenario = one_car_scenario(
        vehicles_m=[{"id": 1, "pos": (0.0, -10.0), "vel": (1.0, 8.0), "acc": (0.2, -0.5)}]
    )
    _, truth = sim.simulate(scenario, seed=0)
    rows = state_rows(truth, vehicle=1)
    lam = truth[0]["lambda"]
    for i in range(1, len(rows) - 1):
        c_prev = np.array(rows[i - 1]["center"])
        c_next = np.array(rows[i + 1]["center"])
        v_central = (c_next - c_prev) * FPS / 2.0
        assert rows[i]["speed_kmh"] == pytest.approx(
            float(np.linalg.norm(v_central)) * lam * 3.6, abs=1e-9
        )


def test_spawn_despawn_window():
    scenario = one_car_scenario(
        vehicles_m=[{"id": 1, "pos": (0.0, 0.0), "vel": (0.0, 0.0),
                     "spawn": 5, "despawn": 12}]
    )
    dets, truth = sim.simulate(scenario, seed=0)
    frames = [r["frame"] for r in state_rows(truth, vehicle=1)]
    assert frames == list(range(5, 12))
    assert {d["frame"] for d in dets} <= set(frames)


# ── simulate: detections and noise ──────────────────────────────────────────

def test_noiseless_detection_contours_match_truth_corners():
    dets, truth = sim.simulate(one_car_scenario(), seed=0)
    states = {r["frame"]: r for r in state_rows(truth, vehicle=1)}
    assert len(dets) == 20
    for det in dets:
        st = states[det["frame"]]
        assert st["visible"]
        corners = np.array(st["corners_image"])
        contour = np.array(det["contour"])
        # the contour is the silhouette hull: a subset of the projected corners
        d = np.linalg.norm(contour[:, None, :] - corners[None, :, :], axis=2).min(axis=1)
        assert d.max() <= 1e-9
        x, y, w, h = det["bbox"]
        assert x == pytest.approx(contour[:, 0].min())
        assert x + w == pytest.approx(contour[:, 0].max())
        assert y == pytest.approx(contour[:, 1].min())
        assert y + h == pytest.approx(contour[:, 1].max())
        assert det["track_id"] == 1
        assert det["class"] == "car"


def test_seeded_noise_is_deterministic():
    scenario = one_car_scenario(noise={"contour_jitter_px": 0.8, "drop_probability": 0.3})
    a_det, a_truth = sim.simulate(scenario, seed=11)
    b_det, b_truth = sim.simulate(scenario, seed=11)
    assert json.dumps(a_det) == json.dumps(b_det)
    assert json.dumps(a_truth) == json.dumps(b_truth)
    c_det, _ = sim.simulate(scenario, seed=12)
    assert json.dumps(a_det) != json.dumps(c_det)


def test_drop_probability_extremes():
    all_dropped, truth = sim.simulate(
        one_car_scenario(noise={"drop_probability": 1.0}), seed=0
    )
    assert all_dropped == []
    assert len(state_rows(truth)) == 20  # truth unaffected by detector noise


def test_detections_only_for_visible_states():
    # drives backward past and under the camera: leaves the view partway
    scenario = one_car_scenario(
        vehicles_m=[{"id": 1, "pos": (0.0, 5.0), "vel": (0.0, -30.0)}],
        duration_frames=40,
    )
    dets, truth = sim.simulate(scenario, seed=0)
    rows = state_rows(truth, vehicle=1)
    visible = {r["frame"] for r in rows if r["visible"]}
    invisible = {r["frame"] for r in rows if not r["visible"]}
    assert visible and invisible, "scenario should cross the visibility boundary"
    assert {d["frame"] for d in dets} == visible


# ── measurement areas and lines ─────────────────────────────────────────────

def test_period_rows_recomputable_from_states():
    scenario = one_car_scenario(
        vehicles_m=[
            {"id": 1, "pos": (0.0, -12.0), "vel": (0.0, 12.0)},
            {"id": 2, "pos": (3.0, -30.0), "vel": (0.0, 15.0)},
        ],
        duration_frames=50,
        seed_area_m=(-5.0, 15.0),
    )
    _, truth = sim.simulate(scenario, seed=0)
    lo, hi = truth[0]["measurement_area"]
    periods = {r["vehicle"]: r for r in truth if r["type"] == "period"}
    assert set(periods) == {1, 2}
    for vid, row in periods.items():
        inside = [r for r in state_rows(truth, vehicle=vid) if lo <= r["center"][1] <= hi]
        assert row["enter_frame"] == inside[0]["frame"]
        assert row["exit_frame"] == inside[-1]["frame"]
        assert row["enter_s"] == pytest.approx(inside[0]["frame"] / FPS)
        assert row["exit_s"] == pytest.approx(inside[-1]["frame"] / FPS)
        assert row["mean_speed_kmh"] == pytest.approx(
            np.mean([r["speed_kmh"] for r in inside])
        )


def test_measurement_lines_have_true_length_and_projection():
    scenario = one_car_scenario(
        lines_m=[
            {"group": "u", "a": (-2.0, 0.0), "b": (-2.0, 20.0)},
            {"group": "v", "a": (-3.0, 5.0), "b": (3.0, 5.0)},
        ]
    )
    _, truth = sim.simulate(scenario, seed=0)
    lines = [r for r in truth if r["type"] == "line"]
    assert [ln["group"] for ln in lines] == ["u", "v"]
    assert lines[0]["length_m"] == pytest.approx(20.0, abs=1e-9)
    assert lines[1]["length_m"] == pytest.approx(6.0, abs=1e-9)
    camera = _calib.load_calibration(truth[0]["calibration"])
    basis = _calib.plane_basis(camera)
    for ln in lines:
        for img_pt, plane_pt in zip(ln["image"], ln["plane"]):
            world = _calib.project_to_plane(img_pt, camera)
            st = _calib.to_plane_coords(world, basis)
            assert np.allclose(st, plane_pt, atol=1e-6)


# ── scenario loading and JSONL IO ───────────────────────────────────────────

def test_load_scenario_requires_sections():
    with pytest.raises(ValueError):
        sim.load_scenario({"vehicles": []})
    with pytest.raises(ValueError):
        sim.load_scenario({"camera": {}})


def test_load_scenario_defaults():
    scenario = sim.load_scenario(
        {
            "camera": {"fps": 30.0},
            "duration_frames": 10,
            "vehicles": [{"initial_position": [1.0, 2.0]}],
        }
    )
    veh = scenario.vehicles[0]
    assert veh.vehicle_id == 1
    assert veh.cls == "car"
    assert veh.dims_m == (4.5, 1.8, 1.5)
    assert veh.velocity == (0.0, 0.0)
    assert veh.spawn_frame == 0 and veh.despawn_frame is None
    assert scenario.fps == 30.0
    assert scenario.emit_track_ids is True
    assert scenario.contour_jitter_px == 0.0
    assert scenario.drop_probability == 0.0


def test_jsonl_roundtrip(tmp_path):
    rows = [{"frame": 0, "bbox": [1.5, 2.0, 3.0, 4.0]}, {"frame": 1, "contour": [[0, 1]]}]
    path = tmp_path / "rows.jsonl"
    sim.write_jsonl(rows, path)
    assert sim.read_jsonl(path) == rows
