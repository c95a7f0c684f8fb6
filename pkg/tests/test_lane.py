"""Lane following: equalization, segment votes, belief filter, control."""

import colorsys
import math

import numpy as np
import pytest

from oodtown import camera, lane, sim
from oodtown.errors import ArgumentError
from oodtown.rng import sub_rng


CAM = camera.CameraModel.sized(160, 120)


# ---------------------------------------------------------------------------
# equalization

def test_equalize_constant_maps_to_255():
    img = np.full((8, 8), 17, dtype=np.uint8)
    assert np.all(lane.equalize(img) == 255)


def test_equalize_two_level():
    img = np.zeros((2, 4), dtype=np.uint8)
    img[:, 2:] = 200
    eq = lane.equalize(img)
    # cdf(0) = 0.5, cdf(200) = 1.0
    assert np.all(eq[:, :2] == 127)
    assert np.all(eq[:, 2:] == 255)


def test_equalize_monotone():
    rng = sub_rng(0, "eq")
    img = rng.integers(0, 256, (32, 32), dtype=np.uint8)
    eq = lane.equalize(img)
    order = np.argsort(img.ravel(), kind="stable")
    assert np.all(np.diff(eq.ravel()[order].astype(int)) >= 0)


def test_equalize_color_keeps_chroma():
    img = np.zeros((2, 4, 3), dtype=np.uint8)
    img[0] = (100, 60, 0)     # luma 65 -> cdf 0.5 -> delta +62, no clipping
    img[1] = (210, 170, 130)
    eq = lane.equalize(img)
    assert np.all(eq[0, :, 0] == 162) and np.all(eq[0, :, 1] == 122)
    assert np.all(eq[0, :, 0].astype(int) - eq[0, :, 1].astype(int) == 40)


def test_equalize_rejects_bad_input():
    with pytest.raises(ArgumentError):
        lane.equalize(np.zeros((4, 4), dtype=np.float32))
    with pytest.raises(ArgumentError):
        lane.equalize(np.zeros((4, 4, 4), dtype=np.uint8))


# ---------------------------------------------------------------------------
# hsv

def test_rgb_to_hsv_matches_colorsys():
    rng = sub_rng(1, "hsv")
    rgb = rng.integers(0, 256, (40, 3), dtype=np.uint8)
    h, s, v = lane.rgb_to_hsv(rgb[None, :, :])
    for i, (r, g, b) in enumerate(rgb):
        eh, es, ev = colorsys.rgb_to_hsv(r / 255.0, g / 255.0, b / 255.0)
        assert h[0, i] == pytest.approx((eh * 360.0) % 360.0, abs=1e-3)
        assert s[0, i] == pytest.approx(es, abs=1e-6)
        assert v[0, i] == pytest.approx(ev, abs=1e-6)


def test_rgb_to_hsv_primaries():
    h, s, v = lane.rgb_to_hsv(np.array([[[255, 0, 0], [0, 255, 0],
                                         [0, 0, 255], [128, 128, 128]]], np.uint8))
    assert list(h[0]) == pytest.approx([0.0, 120.0, 240.0, 0.0])
    assert list(s[0]) == pytest.approx([1.0, 1.0, 1.0, 0.0])


# ---------------------------------------------------------------------------
# segment votes (geometric oracle: place ground lines, project to pixels)

def seg_from_ground(p0, p1, color):
    uv = CAM.project_points(np.array([[p0[0], p0[1], 0.0],
                                      [p1[0], p1[1], 0.0]]))
    return lane.Segment(tuple(uv[0]), tuple(uv[1]), color)


def test_votes_centered_lines():
    H = CAM.ground_homography()
    segs = [seg_from_ground((0.3, 0.11), (0.6, 0.11), "yellow"),
            seg_from_ground((0.3, -0.11), (0.6, -0.11), "white")]
    votes = lane.segment_votes(segs, H)
    assert len(votes) == 2
    for d, phi in votes:
        assert d == pytest.approx(0.0, abs=1e-6)
        assert phi == pytest.approx(0.0, abs=1e-6)


def test_votes_pure_offset():
    # robot shifted 0.05 m toward the yellow line: the line sits closer
    H = CAM.ground_homography()
    votes = lane.segment_votes([seg_from_ground((0.3, 0.06), (0.6, 0.06), "yellow")], H)
    d, phi = votes[0]
    assert d == pytest.approx(0.05, abs=1e-6)
    assert phi == pytest.approx(0.0, abs=1e-6)


def test_votes_pure_heading():
    # robot yawed by +0.1 rad at the lane center: rotate the world line
    # into the robot frame and expect (d, phi) = (0, 0.1)
    yaw = 0.1
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, s], [-s, c]])
    p0 = rot @ np.array([0.4, 0.11])
    p1 = rot @ np.array([0.8, 0.11])
    votes = lane.segment_votes([seg_from_ground(p0, p1, "yellow")],
                               CAM.ground_homography())
    d, phi = votes[0]
    assert d == pytest.approx(0.0, abs=1e-6)
    assert phi == pytest.approx(yaw, abs=1e-6)


def test_votes_endpoint_order_irrelevant():
    H = CAM.ground_homography()
    a = seg_from_ground((0.3, 0.08), (0.6, 0.09), "yellow")
    b = lane.Segment(a.p1, a.p0, "yellow")
    va = lane.segment_votes([a], H)[0]
    vb = lane.segment_votes([b], H)[0]
    assert va == pytest.approx(vb)


def test_votes_skip_sky_segments():
    H = CAM.ground_homography()
    horizon = CAM.cy - CAM.focal * math.tan(CAM.tilt_rad)
    seg = lane.Segment((10.0, horizon - 5.0), (50.0, horizon - 5.0), "white")
    assert lane.segment_votes([seg], H) == []


# ---------------------------------------------------------------------------
# belief filter

def test_make_belief_uniform():
    b = lane.make_belief()
    assert b.shape == (lane.D_CELLS, lane.PHI_CELLS)
    assert b.sum() == pytest.approx(1.0)
    assert np.ptp(b) == 0.0


def test_belief_step_validates_input():
    with pytest.raises(ArgumentError):
        lane.belief_step(np.ones((3, 3)), [])
    bad = lane.make_belief() * 2.0
    with pytest.raises(ArgumentError):
        lane.belief_step(bad, [])


def test_belief_converges_to_votes():
    b = lane.make_belief()
    target = (0.05, -0.2)
    for _ in range(10):
        b, pose = lane.belief_step(b, [target] * 5)
    assert pose.d == pytest.approx(0.05, abs=0.6 / (lane.D_CELLS - 1))
    assert pose.phi == pytest.approx(-0.2, abs=math.pi / (lane.PHI_CELLS - 1))


def test_belief_motion_shifts_peak():
    b = lane.make_belief()
    for _ in range(8):
        b, pose = lane.belief_step(b, [(0.0, 0.0)] * 5)
    assert pose.d == pytest.approx(0.0, abs=1e-9)
    b, pose = lane.belief_step(b, [], motion=(0.03, 0.0))
    assert pose.d == pytest.approx(0.03, abs=1e-9)
    assert pose.phi == pytest.approx(0.0, abs=1e-9)


def test_belief_fuzz_stays_normalized():
    rng = sub_rng(9, "belief.fuzz")
    b = lane.make_belief()
    for step in range(200):
        n = int(rng.integers(0, 6))
        votes = [(float(rng.uniform(-0.4, 0.4)), float(rng.uniform(-2.0, 2.0)))
                 for _ in range(n)]
        motion = (float(rng.uniform(-0.02, 0.02)), float(rng.uniform(-0.1, 0.1)))
        b, pose = lane.belief_step(b, votes, motion)
        assert np.all(np.isfinite(b))
        assert np.all(b >= 0)
        assert b.sum() == pytest.approx(1.0, abs=1e-9)
        assert abs(pose.d) <= lane.D_SPAN and abs(pose.phi) <= lane.PHI_SPAN


# ---------------------------------------------------------------------------
# control law

def test_lane_control_signs():
    cfg = lane.LaneConfig()
    right = lane.lane_control(lane.LanePose(0.1, 0.0), cfg)
    assert right.omega < 0                       # drifted left: steer right
    left = lane.lane_control(lane.LanePose(-0.1, 0.0), cfg)
    assert left.omega > 0
    yawed = lane.lane_control(lane.LanePose(0.0, 0.3), cfg)
    assert yawed.omega == pytest.approx(-cfg.k_phi * 0.3)
    assert yawed.v == cfg.v_nominal


def test_lane_control_gains_and_clamp():
    cfg = lane.LaneConfig()
    cmd = lane.lane_control(lane.LanePose(0.05, -0.1), cfg)
    assert cmd.omega == pytest.approx(-6.0 * 0.05 + 2.0 * 0.1)
    big = lane.lane_control(lane.LanePose(2.0, 2.0), cfg)
    assert big.omega == -cfg.omega_max


# ---------------------------------------------------------------------------
# end to end on rendered frames

def road_frame(d=0.0, phi=0.0):
    world = sim.WorldConfig(track=sim.straight_track())
    robot = sim.RobotState(1.5, world.lane_center_offset + d, phi)
    img, _ = sim.render(world, robot, CAM)
    return img


def test_detect_segments_on_render():
    segs = lane.detect_segments(lane.equalize(road_frame()))
    colors = {s.color for s in segs}
    assert "white" in colors and "yellow" in colors


def test_rendered_votes_near_truth():
    segs = lane.detect_segments(lane.equalize(road_frame()))
    votes = lane.segment_votes(segs, CAM.ground_homography())
    assert votes
    med_d = float(np.median([v[0] for v in votes]))
    med_phi = float(np.median([v[1] for v in votes]))
    assert abs(med_d) < 0.05
    assert abs(med_phi) < 0.15


def test_follower_recovers_offset():
    f = lane.LaneFollower(CAM)
    for _ in range(12):
        cmd = f.step(road_frame(d=0.08), 1 / 15.0)
    assert f.pose.d > 0.03          # sensed the leftward offset
    assert cmd.omega < 0            # and steers back to the right
    assert f.belief.sum() == pytest.approx(1.0, abs=1e-9)
