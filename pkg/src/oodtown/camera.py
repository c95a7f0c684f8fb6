"""Pinhole camera fixed to the robot, looking ahead and tilted down.

Frames: robot frame is right-handed with x forward, y left, z up, origin
on the ground under the camera. The camera sits at (0, 0, height_m) with
its optical axis pitched down by tilt_rad. Image u grows right, v grows
down.

The ground homography H maps pixel homogeneous coords (u, v, 1) to
ground homogeneous coords (x, y, w); points at or above the horizon give
w <= 0 and have no ground preimage.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ProjectionError


@dataclass(frozen=True)
class CameraModel:
    width: int = 640
    height: int = 480
    focal: float = 320.0
    cx: float = 320.0
    cy: float = 240.0
    height_m: float = 0.1
    tilt_rad: float = math.radians(15.0)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def sized(cls, width: int, height: int, hfov_deg: float = 90.0,
              height_m: float = 0.1, tilt_deg: float = 15.0) -> "CameraModel":
        f = width / (2.0 * math.tan(math.radians(hfov_deg) / 2.0))
        return cls(width=width, height=height, focal=f,
                   cx=width / 2.0, cy=height / 2.0,
                   height_m=height_m, tilt_rad=math.radians(tilt_deg))

    def ground_homography(self) -> np.ndarray:
        """3x3 map from pixel (u, v, 1) to robot-frame ground (x, y, w)."""
        f, cx, cy, h = self.focal, self.cx, self.cy, self.height_m
        ct, st = math.cos(self.tilt_rad), math.sin(self.tilt_rad)
        return np.array([
            [0.0, -h * st, h * (f * ct + st * cy)],
            [-h, 0.0, h * cx],
            [0.0, ct, f * st - ct * cy],
        ], dtype=np.float64)

    def pixel_homography(self) -> np.ndarray:
        """Inverse map: robot-frame ground (x, y, 1) to pixel (u, v, w)."""
        return np.linalg.inv(self.ground_homography())

    def horizon_v(self) -> float:
        """Image row of the horizon; rows above have no ground point."""
        if self.tilt_rad <= 0:
            return -math.inf
        return self.cy - self.focal * math.tan(self.tilt_rad)

    def ground_maps(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-pixel robot-frame ground coords (gx, gy) and a visibility
        mask (below horizon, in front of the camera). Cached."""
        if "maps" not in self._cache:
            H = self.ground_homography()
            us, vs = np.meshgrid(np.arange(self.width, dtype=np.float64) + 0.5,
                                 np.arange(self.height, dtype=np.float64) + 0.5)
            w = H[2, 0] * us + H[2, 1] * vs + H[2, 2]
            ok = w > 1e-9
            wsafe = np.where(ok, w, 1.0)
            gx = (H[0, 0] * us + H[0, 1] * vs + H[0, 2]) / wsafe
            gy = (H[1, 0] * us + H[1, 1] * vs + H[1, 2]) / wsafe
            ok &= gx > 0
            self._cache["maps"] = (gx.astype(np.float64), gy.astype(np.float64), ok)
        return self._cache["maps"]

    def project_points(self, pts: np.ndarray) -> np.ndarray:
        """Robot-frame 3D points [N, 3] -> pixel coords [N, 2] (u, v).

        Raises ProjectionError if any point is not in front of the camera.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        ct, st = math.cos(self.tilt_rad), math.sin(self.tilt_rad)
        # camera-centered coordinates
        x = pts[:, 0]
        y = pts[:, 1]
        z = pts[:, 2] - self.height_m
        xc = -y                      # image right = robot right
        yc = -x * st - z * ct        # image down
        zc = x * ct - z * st         # optical axis
        if np.any(zc <= 1e-9):
            raise ProjectionError("point behind the camera plane")
        uv = np.empty((len(pts), 2))
        uv[:, 0] = self.cx + self.focal * xc / zc
        uv[:, 1] = self.cy + self.focal * yc / zc
        return uv


def project_ground(segment_px: np.ndarray, homography: np.ndarray) -> np.ndarray:
    """Map pixel points [N, 2] to ground meters [N, 2] via the homography.

    Raises ProjectionError when a point maps to the line at infinity
    (w ~ 0) or behind the camera (w < 0); callers drop such segments.
    """
    pts = np.atleast_2d(np.asarray(segment_px, dtype=np.float64))
    ones = np.ones((len(pts), 1))
    hp = np.hstack([pts, ones]) @ np.asarray(homography, dtype=np.float64).T
    w = hp[:, 2]
    if np.any(np.abs(w) < 1e-12) or np.any(w < 0):
        raise ProjectionError("segment endpoint has no ground preimage")
    return hp[:, :2] / w[:, None]
