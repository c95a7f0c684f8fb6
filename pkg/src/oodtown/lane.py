"""Classical-CV lane following.

Pipeline per frame: global histogram equalization on luma -> HSV masks
for white/yellow markings with a gradient gate -> line segments from
connected components -> ground projection through the camera homography
-> (d, phi) votes -> Bayesian histogram filter -> proportional steering.

Lane frame: d is the robot's lateral offset from the center of its
driving lane, positive to the left; phi is heading error. The yellow
road-center line sits at +lane_half/2 and the white edge line at
-lane_half/2 from the driving-lane center.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .camera import CameraModel, project_ground
from .errors import ArgumentError, ProjectionError

D_CELLS = 41
PHI_CELLS = 61
D_SPAN = 0.3                  # grid covers [-0.3, 0.3] m
PHI_SPAN = math.pi / 2        # grid covers [-pi/2, pi/2] rad
D_CENTERS = np.linspace(-D_SPAN, D_SPAN, D_CELLS)
PHI_CENTERS = np.linspace(-PHI_SPAN, PHI_SPAN, PHI_CELLS)
_D_CELL = 2 * D_SPAN / (D_CELLS - 1)
_PHI_CELL = 2 * PHI_SPAN / (PHI_CELLS - 1)
_D_EDGES = np.linspace(-D_SPAN - _D_CELL / 2, D_SPAN + _D_CELL / 2, D_CELLS + 1)
_PHI_EDGES = np.linspace(-PHI_SPAN - _PHI_CELL / 2, PHI_SPAN + _PHI_CELL / 2, PHI_CELLS + 1)

SIGMA_D = 0.01        # prediction diffusion, meters
SIGMA_PHI = 0.05      # prediction diffusion, radians
VOTE_FLOOR = 1e-6


@dataclass(frozen=True)
class Segment:
    """Detected marking piece: endpoints in pixel coords, paint color."""
    p0: tuple[float, float]
    p1: tuple[float, float]
    color: str  # "white" | "yellow"


@dataclass(frozen=True)
class LanePose:
    d: float
    phi: float


@dataclass(frozen=True)
class WheelCmd:
    v: float
    omega: float


@dataclass(frozen=True)
class LaneConfig:
    lane_half: float = 0.22
    v_nominal: float = 0.22
    k_d: float = 6.0
    k_phi: float = 2.0
    v_max: float = 0.5
    omega_max: float = 4.0
    min_seg_px: float = 10.0
    band_rows: int = 20        # split tall components for curve handling
    sobel_gate: float = 25.0   # mean gradient a marking component must carry

    @property
    def line_offset(self) -> float:
        """|lateral offset| of each lane line from the driving-lane center."""
        return self.lane_half / 2.0


# ---------------------------------------------------------------------------
# equalization

def equalize(frame: np.ndarray) -> np.ndarray:
    """Global histogram equalization, out = floor(cdf(v) * 255).

    Color frames are equalized on luma; the same delta is added to all
    channels so chroma differences survive. By the CDF convention a
    constant image maps to 255.
    """
    frame = np.asarray(frame)
    if frame.dtype != np.uint8:
        raise ArgumentError("equalize expects uint8 frames")
    if frame.ndim == 2:
        luma = frame
    elif frame.ndim == 3 and frame.shape[2] == 3:
        f = frame.astype(np.float32)
        luma = np.clip(np.rint(0.299 * f[..., 0] + 0.587 * f[..., 1] + 0.114 * f[..., 2]),
                       0, 255).astype(np.uint8)
    else:
        raise ArgumentError("equalize expects [H,W] or [H,W,3]")
    hist = np.bincount(luma.ravel(), minlength=256)
    cdf = np.cumsum(hist) / luma.size
    lut = np.floor(cdf * 255.0).astype(np.int16)
    eq = lut[luma]
    if frame.ndim == 2:
        return eq.astype(np.uint8)
    delta = (eq.astype(np.int16) - luma.astype(np.int16))[..., None]
    return np.clip(frame.astype(np.int16) + delta, 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# segment detection

def rgb_to_hsv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """uint8 RGB -> (hue degrees [0,360), saturation [0,1], value [0,1])."""
    f = rgb.astype(np.float32) / 255.0
    r, g, b = f[..., 0], f[..., 1], f[..., 2]
    mx = f.max(axis=-1)
    mn = f.min(axis=-1)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    h = np.select(
        [delta == 0, mx == r, mx == g],
        [0.0,
         np.mod((g - b) / safe, 6.0),
         (b - r) / safe + 2.0],
        default=(r - g) / safe + 4.0) * 60.0
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return h, s, mx


def _component_segments(mask: np.ndarray, grad: np.ndarray, color: str,
                        cfg: LaneConfig) -> list[Segment]:
    h, w = mask.shape
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    segments: list[Segment] = []
    slices = ndimage.find_objects(labels)
    for idx in range(n):
        sl = slices[idx]
        comp = labels[sl] == idx + 1
        if comp.sum() < cfg.min_seg_px:
            continue
        if grad[sl][comp].mean() < cfg.sobel_gate:
            continue
        ys, xs = np.nonzero(comp)
        ys = ys + sl[0].start
        xs = xs + sl[1].start
        # split tall components into row bands so arcs become chords
        y_lo = ys.min()
        for b0 in range(y_lo, ys.max() + 1, cfg.band_rows):
            sel = (ys >= b0) & (ys < b0 + cfg.band_rows)
            if sel.sum() < cfg.min_seg_px:
                continue
            px = xs[sel].astype(np.float64)
            py = ys[sel].astype(np.float64)
            mx_, my_ = px.mean(), py.mean()
            cxx = ((px - mx_) ** 2).mean()
            cyy = ((py - my_) ** 2).mean()
            cxy = ((px - mx_) * (py - my_)).mean()
            # principal axis of the 2x2 covariance
            ang = 0.5 * math.atan2(2 * cxy, cxx - cyy)
            ex, ey = math.cos(ang), math.sin(ang)
            t = (px - mx_) * ex + (py - my_) * ey
            t0, t1 = t.min(), t.max()
            if t1 - t0 < cfg.min_seg_px:
                continue
            p0 = (min(max(mx_ + t0 * ex, 0.0), w - 1.0), min(max(my_ + t0 * ey, 0.0), h - 1.0))
            p1 = (min(max(mx_ + t1 * ex, 0.0), w - 1.0), min(max(my_ + t1 * ey, 0.0), h - 1.0))
            segments.append(Segment(p0, p1, color))
    return segments


def detect_segments(frame: np.ndarray, cfg: LaneConfig | None = None) -> list[Segment]:
    """White/yellow marking segments from an equalized RGB frame."""
    cfg = cfg or LaneConfig()
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ArgumentError("detect_segments expects an RGB frame")
    hue, sat, val = rgb_to_hsv(frame)
    luma = (0.299 * frame[..., 0] + 0.587 * frame[..., 1]
            + 0.114 * frame[..., 2]).astype(np.float32)
    gx = ndimage.sobel(luma, axis=1, mode="nearest")
    gy = ndimage.sobel(luma, axis=0, mode="nearest")
    grad = np.hypot(gx, gy)
    white = (sat <= 0.15) & (val >= 0.88)
    yellow = (hue >= 45.0) & (hue <= 75.0) & (sat >= 0.5) & (val >= 0.6)
    segs = _component_segments(white, grad, "white", cfg)
    segs += _component_segments(yellow, grad, "yellow", cfg)
    return segs


# ---------------------------------------------------------------------------
# votes and the histogram filter

def segment_votes(segments: list[Segment], homography: np.ndarray,
                  cfg: LaneConfig | None = None) -> list[tuple[float, float]]:
    """Project segments to the ground and read off (d, phi) votes.

    A line with direction angle psi in the robot frame implies heading
    error phi = -psi; with the line's known lane offset L, a point
    (X, Y) on it implies d = L + X sin(psi) - Y cos(psi).
    """
    cfg = cfg or LaneConfig()
    votes = []
    for seg in segments:
        try:
            g = project_ground(np.array([seg.p0, seg.p1]), homography)
        except ProjectionError:
            continue
        d_vec = g[1] - g[0]
        if d_vec[0] < 0:  # lane lines point forward
            d_vec = -d_vec
        norm = math.hypot(d_vec[0], d_vec[1])
        if norm < 1e-9:
            continue
        psi = math.atan2(d_vec[1], d_vec[0])
        off = cfg.line_offset if seg.color == "yellow" else -cfg.line_offset
        mid = 0.5 * (g[0] + g[1])
        d = off + math.sin(psi) * mid[0] - math.cos(psi) * mid[1]
        votes.append((float(d), float(-psi)))
    return votes


def make_belief() -> np.ndarray:
    b = np.full((D_CELLS, PHI_CELLS), 1.0 / (D_CELLS * PHI_CELLS))
    return b


def _check_belief(belief: np.ndarray) -> np.ndarray:
    belief = np.asarray(belief, dtype=np.float64)
    if belief.shape != (D_CELLS, PHI_CELLS):
        raise ArgumentError(f"belief grid must be {D_CELLS}x{PHI_CELLS}")
    if np.any(belief < 0) or abs(belief.sum() - 1.0) > 1e-9:
        raise ArgumentError("belief must be a normalized distribution")
    return belief


def belief_step(belief: np.ndarray, votes: list[tuple[float, float]],
                motion: tuple[float, float] = (0.0, 0.0)) -> tuple[np.ndarray, LanePose]:
    """One predict/update cycle; returns (new belief, argmax pose)."""
    belief = _check_belief(belief)
    dd, dphi = motion
    pred = ndimage.shift(belief, (dd / _D_CELL, dphi / _PHI_CELL),
                         order=1, mode="nearest")
    pred = ndimage.gaussian_filter(pred, (SIGMA_D / _D_CELL, SIGMA_PHI / _PHI_CELL),
                                   mode="nearest")
    pred = np.maximum(pred, 0.0)
    pred /= pred.sum()
    if votes:
        arr = np.asarray(votes, dtype=np.float64)
        hist, _, _ = np.histogram2d(arr[:, 0], arr[:, 1], bins=(_D_EDGES, _PHI_EDGES))
    else:
        hist = np.zeros((D_CELLS, PHI_CELLS))
    post = pred * (hist + VOTE_FLOOR)
    post /= post.sum()
    di, pi = np.unravel_index(np.argmax(post), post.shape)
    return post, LanePose(float(D_CENTERS[di]), float(PHI_CENTERS[pi]))


def lane_control(pose: LanePose, cfg: LaneConfig | None = None) -> WheelCmd:
    """Proportional steering toward lane center: omega = -k_d d - k_phi phi."""
    cfg = cfg or LaneConfig()
    omega = -cfg.k_d * pose.d - cfg.k_phi * pose.phi
    omega = min(max(omega, -cfg.omega_max), cfg.omega_max)
    v = min(max(cfg.v_nominal, -cfg.v_max), cfg.v_max)
    return WheelCmd(v, omega)


# ---------------------------------------------------------------------------
# stateful follower for closed-loop runs

@dataclass
class LaneFollower:
    """Owns the belief grid; call step(frame, dt) per camera frame."""
    camera: CameraModel
    cfg: LaneConfig = field(default_factory=LaneConfig)

    def __post_init__(self):
        self.homography = self.camera.ground_homography()
        self.belief = make_belief()
        self.pose = LanePose(0.0, 0.0)
        self.last_cmd = WheelCmd(0.0, 0.0)

    def step(self, frame: np.ndarray, dt: float) -> WheelCmd:
        eq = equalize(frame)
        segs = detect_segments(eq, self.cfg)
        votes = segment_votes(segs, self.homography, self.cfg)
        # odometry prediction from the last command
        dd = self.last_cmd.v * math.sin(self.pose.phi) * dt
        dphi = self.last_cmd.omega * dt
        self.belief, self.pose = belief_step(self.belief, votes, (dd, dphi))
        self.last_cmd = lane_control(self.pose, self.cfg)
        return self.last_cmd
