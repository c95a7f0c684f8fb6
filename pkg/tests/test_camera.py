import math

import numpy as np
import pytest

from oodtown.camera import CameraModel, project_ground
from oodtown.errors import ProjectionError


def test_sized_focal_from_hfov():
    cam = CameraModel.sized(320, 240, hfov_deg=90.0)
    assert cam.width == 320 and cam.height == 240
    assert np.isclose(cam.focal, 160.0)
    assert np.isclose(cam.cx, 160.0) and np.isclose(cam.cy, 120.0)


def test_ground_round_trip():
    """Project a ground point to pixels and back through the homography."""
    cam = CameraModel.sized(320, 240)
    pts = np.array([[0.4, 0.05, 0.0], [0.8, -0.1, 0.0], [0.3, 0.0, 0.0]])
    uv = cam.project_points(pts)
    back = project_ground(uv, cam.ground_homography())
    assert np.allclose(back, pts[:, :2], atol=1e-9)


def test_pixel_homography_is_inverse():
    cam = CameraModel.sized(128, 96)
    H = cam.ground_homography() @ cam.pixel_homography()
    assert np.allclose(H / H[0, 0], np.eye(3), atol=1e-9)


def test_horizon_above_ground_pixels():
    cam = CameraModel.sized(320, 240)
    hv = cam.horizon_v()
    # the row just below the horizon maps to far-away ground, rows above fail
    with pytest.raises(ProjectionError):
        project_ground(np.array([[160.0, hv - 1.0]]), cam.ground_homography())
    far = project_ground(np.array([[160.0, hv + 2.0]]), cam.ground_homography())
    assert far[0, 0] > 5.0


def test_ground_maps_mask_and_values():
    cam = CameraModel.sized(64, 48)
    gx, gy, ok = cam.ground_maps()
    assert gx.shape == (48, 64) and ok.dtype == bool
    # bottom-center pixel looks at nearby ground on the centerline
    v, u = 47, 32
    assert ok[v, u]
    assert 0.0 < gx[v, u] < 1.0
    assert abs(gy[v, u]) < 0.05
    # nothing above the horizon is ground
    assert not ok[0].any()


def test_center_pixel_distance_matches_tilt():
    cam = CameraModel.sized(320, 240, height_m=0.1, tilt_deg=15.0)
    uv = np.array([[cam.cx, cam.cy]])
    g = project_ground(uv + 0.0, cam.ground_homography())
    # optical axis hits ground at height / tan(tilt)
    want = 0.1 / math.tan(math.radians(15.0))
    assert np.isclose(g[0, 0], want, rtol=1e-9)
    assert np.isclose(g[0, 1], 0.0, atol=1e-12)


def test_point_behind_camera_rejected():
    cam = CameraModel.sized(320, 240)
    with pytest.raises(ProjectionError):
        cam.project_points(np.array([[-1.0, 0.0, 0.0]]))


def test_left_is_positive_y():
    cam = CameraModel.sized(320, 240)
    uv = cam.project_points(np.array([[0.5, 0.1, 0.0]]))
    assert uv[0, 0] < cam.cx  # left of center in the image
