"""Simulator: kinematics, track geometry, rendering, snow, datasets."""

import math
import os

import numpy as np
import pytest

from oodtown import camera, netpbm, sim
from oodtown.errors import ArgumentError, ConfigError
from oodtown.rng import sub_rng


def small_camera():
    return camera.CameraModel.sized(64, 48)


# ---------------------------------------------------------------------------
# kinematics

def test_straight_motion():
    s = sim.RobotState()
    s2 = sim.step_kinematics(s, (1.0, 0.0), 0.5)
    assert s2.x == pytest.approx(0.5)
    assert s2.y == pytest.approx(0.0)
    assert s2.theta == 0.0


def test_straight_motion_heading():
    s = sim.RobotState(theta=math.pi / 2)
    s2 = sim.step_kinematics(s, (2.0, 0.0), 0.25)
    assert s2.x == pytest.approx(0.0, abs=1e-12)
    assert s2.y == pytest.approx(0.5)


def test_exact_arc_half_circle():
    # v=1, omega=pi for 1s turns through half a circle of radius 1/pi
    s2 = sim.step_kinematics(sim.RobotState(), (1.0, math.pi), 1.0)
    assert s2.theta == pytest.approx(math.pi)
    assert s2.x == pytest.approx(0.0, abs=1e-12)
    assert s2.y == pytest.approx(2.0 / math.pi)


def test_arc_matches_euler_limit():
    # many small exact-arc steps agree with fine Euler integration
    st = sim.RobotState()
    for _ in range(100):
        st = sim.step_kinematics(st, (0.3, 1.7), 0.01)
    x, y, th = 0.0, 0.0, 0.0
    n = 100000
    for _ in range(n):
        x += 0.3 * math.cos(th) * (1.0 / n)
        y += 0.3 * math.sin(th) * (1.0 / n)
        th += 1.7 * (1.0 / n)
    assert st.x == pytest.approx(x, abs=1e-4)
    assert st.y == pytest.approx(y, abs=1e-4)


def test_cmd_object_and_tuple_agree():
    class Cmd:
        v = 0.4
        omega = -0.2

    a = sim.step_kinematics(sim.RobotState(), Cmd(), 0.1)
    b = sim.step_kinematics(sim.RobotState(), (0.4, -0.2), 0.1)
    assert (a.x, a.y, a.theta) == (b.x, b.y, b.theta)


def test_nonpositive_dt_rejected():
    with pytest.raises(ArgumentError):
        sim.step_kinematics(sim.RobotState(), (1.0, 0.0), 0.0)


# ---------------------------------------------------------------------------
# track geometry

def test_straight_track_query():
    t = sim.straight_track(20.0)
    lat, s, heading = t.query(np.array([[5.0, 0.3]]))
    assert lat[0] == pytest.approx(0.3)      # left of travel is positive
    assert s[0] == pytest.approx(5.0)
    assert heading[0] == pytest.approx(0.0)


def test_point_at_round_trip():
    t = sim.stadium_track()
    for s in [0.0, 1.0, 3.5, 7.0, t.length - 0.25]:
        pos, heading = t.point_at(s)
        lat, s2, h2 = t.query(pos[None, :])
        assert abs(lat[0]) < 1e-9
        assert s2[0] == pytest.approx(s, abs=1e-6)
        assert math.cos(h2[0] - heading) == pytest.approx(1.0)


def test_closed_track_wraps():
    t = sim.stadium_track(straight=3.0, radius=0.8)
    assert t.length == pytest.approx(6.0 + 2 * math.pi * 0.8)
    p1, h1 = t.point_at(1.0)
    p2, h2 = t.point_at(1.0 + t.length)
    assert np.allclose(p1, p2)
    assert h1 == pytest.approx(h2)


def test_empty_track_rejected():
    with pytest.raises(ConfigError):
        sim.Track([])


# ---------------------------------------------------------------------------
# world config

def test_lane_center_offset():
    w = sim.WorldConfig(track=sim.straight_track())
    assert w.lane_center_offset == pytest.approx(-0.11)


def test_object_off_road_rejected():
    with pytest.raises(ConfigError):
        sim.WorldConfig(track=sim.straight_track(),
                        objects=(sim.WorldObject("cone", 5.0, 3.0),))


def test_unknown_object_class_rejected():
    with pytest.raises(ConfigError):
        sim.WorldObject("tree", 1.0, 0.0)


def test_object_default_size():
    o = sim.WorldObject("duckie", 1.0, 0.0)
    assert (o.width_m, o.height_m) == sim.OBJECT_SIZES["duckie"]


# ---------------------------------------------------------------------------
# rendering

def test_render_layout_and_determinism():
    w = sim.WorldConfig(track=sim.straight_track())
    cam = small_camera()
    robot = sim.RobotState(1.0, w.lane_center_offset, 0.0)
    img, boxes = sim.render(w, robot, cam)
    assert img.shape == (48, 64, 3) and img.dtype == np.uint8
    assert boxes == []
    # sky above the horizon, road straight ahead at the bottom
    assert tuple(img[0, 32]) == sim.COLOR_SKY
    assert tuple(img[47, 32]) == sim.COLOR_ROAD
    img2, _ = sim.render(w, robot, cam)
    assert np.array_equal(img, img2)


def test_render_edge_line_visible():
    w = sim.WorldConfig(track=sim.straight_track())
    cam = small_camera()
    img, _ = sim.render(w, sim.RobotState(1.0, w.lane_center_offset, 0.0), cam)
    colors = {tuple(c) for c in img.reshape(-1, 3)}
    assert sim.COLOR_WHITE in colors
    assert sim.COLOR_YELLOW in colors
    assert sim.COLOR_GRASS in colors


def test_render_object_box():
    track = sim.straight_track()
    obj = sim.WorldObject("duckie", 1.5, -0.11)
    w = sim.WorldConfig(track=track, objects=(obj,))
    cam = camera.CameraModel.sized(160, 120)
    robot = sim.RobotState(1.0, -0.11, 0.0)
    img, boxes = sim.render(w, robot, cam)
    assert len(boxes) == 1
    b = boxes[0]
    assert b["cls"] == "duckie"
    assert b["dist_m"] == pytest.approx(0.5)
    x0, y0, x1, y1 = b["box"]
    assert 0 <= x0 < x1 <= 160 and 0 <= y0 < y1 <= 120
    cx, cy = int((x0 + x1) / 2), int((y0 + y1) / 2)
    assert tuple(img[cy, cx]) == sim.OBJECT_COLORS["duckie"]


def test_render_object_behind_ignored():
    w = sim.WorldConfig(track=sim.straight_track(),
                        objects=(sim.WorldObject("cone", 0.5, 0.0),))
    _, boxes = sim.render(w, sim.RobotState(2.0, 0.0, 0.0), small_camera())
    assert boxes == []


def test_to_gray_values():
    rgb = np.array([[[255, 255, 255], [255, 0, 0], [0, 0, 0]]], dtype=np.uint8)
    g = sim.to_gray(rgb)
    assert g.shape == (1, 3)
    assert g.dtype == np.uint8
    assert list(g[0]) == [255, 76, 0]


# ---------------------------------------------------------------------------
# snow

def test_snow_config_validation():
    with pytest.raises(ConfigError):
        sim.SnowConfig(density=0.5)
    with pytest.raises(ConfigError):
        sim.SnowConfig(radius_px=0)


def test_snow_active_window():
    cfg = sim.SnowConfig(density=0.05, start=10, stop=20)
    assert not cfg.active(9)
    assert cfg.active(10)
    assert cfg.active(19)
    assert not cfg.active(20)
    assert not sim.SnowConfig(density=0.0).active(0)


def test_inject_snow_marks_frames():
    cfg = sim.SnowConfig(density=0.05, radius_px=2)
    rng = sub_rng(7, "snow")
    state = sim.SnowState(cfg, 64, 48, rng)
    frame = np.zeros((48, 64, 3), dtype=np.uint8)
    out, ood = sim.inject_snow(frame, cfg, state, rng, 0)
    assert ood
    assert out is not frame                    # copy on write
    assert np.all(frame == 0)
    flakes = np.all(out == sim.SNOW_COLOR, axis=-1)
    assert flakes.any()
    frac = flakes.mean()
    assert 0.005 < frac < 0.2                  # roughly the asked density


def test_inject_snow_inactive_passthrough():
    cfg = sim.SnowConfig(density=0.05, start=100)
    rng = sub_rng(7, "snow")
    state = sim.SnowState(cfg, 64, 48, rng)
    frame = np.zeros((48, 64, 3), dtype=np.uint8)
    out, ood = sim.inject_snow(frame, cfg, state, rng, 0)
    assert out is frame and not ood


def test_snow_deterministic():
    def run():
        cfg = sim.SnowConfig(density=0.03, radius_px=2)
        rng = sub_rng(11, "snow")
        state = sim.SnowState(cfg, 64, 48, rng)
        frames = []
        for i in range(5):
            f, _ = sim.inject_snow(np.zeros((48, 64, 3), np.uint8), cfg, state, rng, i)
            frames.append(f)
        return frames

    for a, b in zip(run(), run()):
        assert np.array_equal(a, b)


def test_snow_drifts_down():
    cfg = sim.SnowConfig(density=0.02, radius_px=2, drift_px=5.0, jitter_px=0.0)
    rng = sub_rng(3, "snow")
    state = sim.SnowState(cfg, 64, 480, rng)
    before = state.pos[:, 1].copy()
    state.advance(cfg, rng)
    moved = state.pos[:, 1] - before
    assert np.all((np.abs(moved - 5.0) < 1e-9) | (moved < 0))  # fallen flakes respawn above


# ---------------------------------------------------------------------------
# scripted routes

def test_scripted_route_stays_in_lane():
    track = sim.stadium_track()
    states = sim.scripted_route(track, 200, 1 / 15.0, sub_rng(1, "route"))
    assert len(states) == 200
    pts = np.array([[s.x, s.y] for s in states])
    lat, _, _ = track.query(pts)
    assert np.all(np.abs(lat) < 0.22)
    assert np.all(np.abs(lat + 0.11) < 0.08)      # near the right-lane center


def test_scripted_route_deterministic():
    track = sim.stadium_track()
    a = sim.scripted_route(track, 50, 1 / 15.0, sub_rng(5, "route"))
    b = sim.scripted_route(track, 50, 1 / 15.0, sub_rng(5, "route"))
    assert all((p.x, p.y, p.theta) == (q.x, q.y, q.theta) for p, q in zip(a, b))
    c = sim.scripted_route(track, 50, 1 / 15.0, sub_rng(6, "route"))
    assert any((p.x, p.y) != (q.x, q.y) for p, q in zip(a, c))


# ---------------------------------------------------------------------------
# dataset generation

def tiny_dataset(tmp_path, seed=42):
    cfg = sim.DatasetConfig(n_train=4, n_videos=2, video_len=8,
                            snow_densities=(0.0, 0.1),
                            snow_start=2, snow_len=4, snow_radius_px=2)
    world = sim.WorldConfig(track=sim.stadium_track())
    cam = small_camera()
    out = str(tmp_path)
    index = sim.generate_dataset(out, world, cam, seed, cfg)
    return out, index


def test_generate_dataset_layout(tmp_path):
    out, index = tiny_dataset(tmp_path)
    assert index["videos"] == ["test_00", "test_01"]
    assert os.path.exists(os.path.join(out, "dataset.json"))
    man = sim.load_manifest(os.path.join(out, "train", "manifest.json"))
    assert len(man["frames"]) == 4
    assert all(r["label"] == "ID" for r in man["frames"])
    ts = [r["timestamp_ms"] for r in man["frames"]]
    assert all(b > a for a, b in zip(ts, ts[1:]))
    assert man["camera"]["width"] == 64
    paths, labels = sim.manifest_frames(os.path.join(out, "train"), man)
    assert labels == [False] * 4
    img = netpbm.read_ppm(paths[0])
    assert img.shape == (48, 64, 3)


def test_generate_dataset_snow_labels(tmp_path):
    out, _ = tiny_dataset(tmp_path)
    clean = sim.load_manifest(os.path.join(out, "test_00", "manifest.json"))
    snowy = sim.load_manifest(os.path.join(out, "test_01", "manifest.json"))
    assert all(r["label"] == "ID" for r in clean["frames"])
    flags = [r["label"] == "OOD" for r in snowy["frames"]]
    assert any(flags)
    # snow can only fall inside its scheduled window
    assert not any(flags[:2]) and not any(flags[6:])


def test_generate_dataset_reproducible(tmp_path):
    out1, _ = tiny_dataset(tmp_path / "a")
    out2, _ = tiny_dataset(tmp_path / "b")
    for rel in ["dataset.json", "train/manifest.json",
                "train/frame_000000.ppm", "test_01/manifest.json",
                "test_01/frame_000003.ppm"]:
        with open(os.path.join(out1, rel), "rb") as f:
            b1 = f.read()
        with open(os.path.join(out2, rel), "rb") as f:
            b2 = f.read()
        assert b1 == b2, rel


def test_dataset_config_mismatch_rejected():
    with pytest.raises(ConfigError):
        sim.DatasetConfig(n_videos=3, snow_densities=(0.1, 0.2))
