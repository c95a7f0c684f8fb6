"""Synthetic desk-scale driving world.

World model: a centerline track (straights and arcs) painted onto the
ground plane as a two-lane road (dashed yellow center line, solid white
edge lines), plus upright billboard objects beside the road. The robot
is a unicycle; its camera renders by inverse perspective: every pixel
below the horizon samples the ground paint at its back-projected world
point, so rendering is exact and needs no rasterizer.

Snowfall is injected in image space as white discs falling coherently
between frames, mirroring how physical confetti appears to the camera.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .camera import CameraModel
from .errors import ArgumentError, ConfigError
from .netpbm import write_ppm
from .rng import sub_rng

GENERATOR_VERSION = 1

# painted-world palette (RGB)
COLOR_GRASS = (40, 110, 45)
COLOR_ROAD = (90, 90, 90)
COLOR_WHITE = (235, 235, 235)
COLOR_YELLOW = (230, 200, 0)
COLOR_SKY = (135, 175, 215)
SNOW_COLOR = 245

OBJECT_CLASSES = ("duckie", "cone", "duckiebot")
OBJECT_COLORS = {"duckie": (255, 170, 30), "cone": (255, 80, 0),
                 "duckiebot": (40, 70, 200)}
OBJECT_SIZES = {"duckie": (0.06, 0.065), "cone": (0.055, 0.08),
                "duckiebot": (0.13, 0.1)}


# ---------------------------------------------------------------------------
# track geometry

@dataclass(frozen=True)
class Straight:
    p0: tuple[float, float]
    p1: tuple[float, float]

    @property
    def length(self) -> float:
        return math.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1])

    def locate(self, pts: np.ndarray):
        p0 = np.asarray(self.p0)
        u = (np.asarray(self.p1) - p0) / self.length
        rel = pts - p0
        t = np.clip(rel @ u, 0.0, self.length)
        closest = p0 + t[:, None] * u
        delta = pts - closest
        dist = np.hypot(delta[:, 0], delta[:, 1])
        lat = u[0] * delta[:, 1] - u[1] * delta[:, 0]
        heading = np.full(len(pts), math.atan2(u[1], u[0]))
        return lat, t, heading, dist

    def point_at(self, t: np.ndarray):
        p0 = np.asarray(self.p0)
        u = (np.asarray(self.p1) - p0) / self.length
        pos = p0 + np.asarray(t)[..., None] * u
        return pos, np.full(np.shape(t), math.atan2(u[1], u[0]))


@dataclass(frozen=True)
class Arc:
    center: tuple[float, float]
    radius: float
    a0: float
    sweep: float  # signed; positive turns left (counterclockwise)

    @property
    def length(self) -> float:
        return abs(self.sweep) * self.radius

    def _angles(self, t):
        return self.a0 + np.sign(self.sweep) * np.asarray(t) / self.radius

    def locate(self, pts: np.ndarray):
        c = np.asarray(self.center)
        rel = pts - c
        ang = np.arctan2(rel[:, 1], rel[:, 0])
        span = abs(self.sweep)
        ccw = self.sweep >= 0
        rel_a = np.mod((ang - self.a0) if ccw else (self.a0 - ang), 2 * math.pi)
        # outside the span, snap to whichever endpoint is angularly nearer
        over = rel_a > span
        rel_a = np.where(over, np.where(rel_a - span < 2 * math.pi - rel_a, span, 0.0), rel_a)
        t = rel_a * self.radius
        a = self._angles(t)
        closest = c + self.radius * np.stack([np.cos(a), np.sin(a)], axis=-1)
        delta = pts - closest
        dist = np.hypot(delta[:, 0], delta[:, 1])
        heading = a + (math.pi / 2 if ccw else -math.pi / 2)
        hx, hy = np.cos(heading), np.sin(heading)
        lat = hx * delta[:, 1] - hy * delta[:, 0]
        return lat, t, heading, dist

    def point_at(self, t: np.ndarray):
        a = self._angles(t)
        pos = np.asarray(self.center) + self.radius * np.stack([np.cos(a), np.sin(a)], axis=-1)
        heading = a + (math.pi / 2 if self.sweep >= 0 else -math.pi / 2)
        return pos, heading


class Track:
    """Centerline as a chain of segments; closed tracks wrap arclength."""

    def __init__(self, segments, closed: bool = True):
        if not segments:
            raise ConfigError("track needs at least one segment")
        self.segments = list(segments)
        self.closed = closed
        self.offsets = np.cumsum([0.0] + [s.length for s in self.segments])
        self.length = float(self.offsets[-1])

    def query(self, pts: np.ndarray):
        """pts [N,2] world -> (lateral offset, arclength s, heading).

        Lateral offset is signed positive to the left of travel direction.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        best = None
        for seg, s0 in zip(self.segments, self.offsets):
            lat, t, heading, dist = seg.locate(pts)
            if best is None:
                best = [lat, s0 + t, heading, dist]
            else:
                take = dist < best[3]
                best[0] = np.where(take, lat, best[0])
                best[1] = np.where(take, s0 + t, best[1])
                best[2] = np.where(take, heading, best[2])
                best[3] = np.where(take, dist, best[3])
        return best[0], best[1], best[2]

    def point_at(self, s):
        """Arclength (scalar) -> (position [2], heading)."""
        s = float(s)
        if self.closed:
            s = s % self.length
        else:
            s = min(max(s, 0.0), self.length)
        for seg, s0 in zip(self.segments, self.offsets):
            if s <= s0 + seg.length + 1e-12:
                pos, heading = seg.point_at(s - s0)
                return np.asarray(pos, dtype=np.float64), float(heading)
        pos, heading = self.segments[-1].point_at(self.segments[-1].length)
        return np.asarray(pos, dtype=np.float64), float(heading)


def straight_track(length: float = 20.0) -> Track:
    return Track([Straight((0.0, 0.0), (length, 0.0))], closed=False)


def stadium_track(straight: float = 3.0, radius: float = 0.8) -> Track:
    """Closed loop: two straights joined by half-circle arcs, run
    counterclockwise starting along +x."""
    return Track([
        Straight((0.0, 0.0), (straight, 0.0)),
        Arc((straight, radius), radius, -math.pi / 2, math.pi),
        Straight((straight, 2 * radius), (0.0, 2 * radius)),
        Arc((0.0, radius), radius, math.pi / 2, math.pi),
    ], closed=True)


# ---------------------------------------------------------------------------
# world / robot

@dataclass(frozen=True)
class WorldObject:
    cls: str
    x: float
    y: float
    width_m: float = 0.0
    height_m: float = 0.0

    def __post_init__(self):
        if self.cls not in OBJECT_CLASSES:
            raise ConfigError(f"unknown object class {self.cls!r}")
        if self.width_m <= 0 or self.height_m <= 0:
            w, h = OBJECT_SIZES[self.cls]
            object.__setattr__(self, "width_m", w if self.width_m <= 0 else self.width_m)
            object.__setattr__(self, "height_m", h if self.height_m <= 0 else self.height_m)


@dataclass(frozen=True)
class WorldConfig:
    track: Track
    objects: tuple[WorldObject, ...] = ()
    lane_half: float = 0.22        # road center to white edge line
    white_width: float = 0.03
    yellow_width: float = 0.024
    dash_len: float = 0.08
    dash_gap: float = 0.08
    seed: int = 0

    def __post_init__(self):
        if self.lane_half <= 0:
            raise ConfigError("lane_half must be positive")
        for obj in self.objects:
            lat, _, _ = self.track.query(np.array([[obj.x, obj.y]]))
            if abs(float(lat[0])) > self.lane_half + 0.8:
                raise ConfigError(f"object {obj.cls} at ({obj.x}, {obj.y}) is far off the road")

    @property
    def lane_center_offset(self) -> float:
        """Lateral offset of the driving (right) lane center from the
        road centerline; the robot's d is measured from this line."""
        return -self.lane_half / 2.0


@dataclass(frozen=True)
class RobotState:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    v: float = 0.0
    omega: float = 0.0


def step_kinematics(state: RobotState, cmd, dt: float) -> RobotState:
    """Unicycle step with exact arc integration for turning motion.

    cmd is anything with .v/.omega (a WheelCmd) or a (v, omega) pair.
    """
    if dt <= 0:
        raise ArgumentError("dt must be positive")
    v, omega = (cmd.v, cmd.omega) if hasattr(cmd, "v") else (float(cmd[0]), float(cmd[1]))
    th = state.theta
    if abs(omega) > 1e-6:
        r = v / omega
        x = state.x + r * (math.sin(th + omega * dt) - math.sin(th))
        y = state.y - r * (math.cos(th + omega * dt) - math.cos(th))
    else:
        x = state.x + v * math.cos(th) * dt
        y = state.y + v * math.sin(th) * dt
    return RobotState(x, y, th + omega * dt, v, omega)


# ---------------------------------------------------------------------------
# rendering

def paint_ground(world: WorldConfig, pts: np.ndarray) -> np.ndarray:
    """World-frame ground points [N,2] -> RGB colors [N,3] uint8."""
    lat, s, _ = world.track.query(pts)
    alat = np.abs(lat)
    colors = np.empty((len(pts), 3), dtype=np.uint8)
    colors[:] = COLOR_GRASS
    road = alat <= world.lane_half + world.white_width / 2
    colors[road] = COLOR_ROAD
    white = np.abs(alat - world.lane_half) <= world.white_width / 2
    colors[white] = COLOR_WHITE
    period = world.dash_len + world.dash_gap
    dash = (alat <= world.yellow_width / 2) & (np.mod(s, period) < world.dash_len)
    colors[dash] = COLOR_YELLOW
    return colors


def world_to_robot(robot: RobotState, pts: np.ndarray) -> np.ndarray:
    c, sn = math.cos(robot.theta), math.sin(robot.theta)
    dx = pts[..., 0] - robot.x
    dy = pts[..., 1] - robot.y
    return np.stack([c * dx + sn * dy, -sn * dx + c * dy], axis=-1)


def robot_to_world(robot: RobotState, pts: np.ndarray) -> np.ndarray:
    c, sn = math.cos(robot.theta), math.sin(robot.theta)
    x = pts[..., 0]
    y = pts[..., 1]
    return np.stack([robot.x + c * x - sn * y, robot.y + sn * x + c * y], axis=-1)


def _fill_billboard(img: np.ndarray, bl, br, tl, tr, cls: str) -> tuple | None:
    """Fill a projected billboard column by column; returns the drawn
    bbox (x0, y0, x1, y1) in continuous pixel coords, or None."""
    h, w = img.shape[:2]
    color = OBJECT_COLORS[cls]
    if br[0] < bl[0]:
        bl, br, tl, tr = br, bl, tr, tl
    u_l, u_r = bl[0], br[0]
    if u_r - u_l < 0.5:
        return None
    j0 = max(int(math.ceil(u_l - 0.5)), 0)
    j1 = min(int(math.floor(u_r - 0.5)), w - 1)
    if j1 < j0:
        return None
    box = [math.inf, math.inf, -math.inf, -math.inf]
    drawn = False
    for j in range(j0, j1 + 1):
        t = ((j + 0.5) - u_l) / (u_r - u_l)
        vbot = bl[1] + t * (br[1] - bl[1])
        vtop = tl[1] + t * (tr[1] - tl[1])
        if cls == "cone":
            # triangle: height tapers linearly toward the edges
            vtop = vbot - (vbot - vtop) * (1.0 - abs(2.0 * t - 1.0))
        elif cls == "duckie":
            # blocky duck: full-height head over the left-center, body
            # at 62% height elsewhere
            if not 0.2 <= t <= 0.6:
                vtop = vbot - (vbot - vtop) * 0.62
        i0 = max(int(math.ceil(vtop - 0.5)), 0)
        i1 = min(int(math.floor(vbot - 0.5)), h - 1)
        if i1 < i0:
            continue
        img[i0:i1 + 1, j] = color
        drawn = True
        box[0] = min(box[0], j)
        box[1] = min(box[1], i0)
        box[2] = max(box[2], j + 1)
        box[3] = max(box[3], i1 + 1)
    return tuple(box) if drawn else None


def render(world: WorldConfig, robot: RobotState,
           camera: CameraModel) -> tuple[np.ndarray, list[dict]]:
    """Render the camera view; returns (RGB uint8 [H,W,3], GT boxes).

    Each GT record: {"cls", "box" (x0, y0, x1, y1 pixels), "dist_m"}.
    """
    gx, gy, ok = camera.ground_maps()
    img = np.empty((camera.height, camera.width, 3), dtype=np.uint8)
    img[:] = COLOR_SKY
    rp = np.stack([gx[ok], gy[ok]], axis=-1)
    wp = robot_to_world(robot, rp)
    img[ok] = paint_ground(world, wp)

    # billboards, far to near
    order = []
    for obj in world.objects:
        rel = world_to_robot(robot, np.array([obj.x, obj.y]))
        if rel[0] > 0.15:
            order.append((float(rel[0]), rel, obj))
    order.sort(key=lambda e: -e[0])
    boxes: list[dict] = []
    for dist, rel, obj in order:
        rx, ry = float(rel[0]), float(rel[1])
        norm = math.hypot(rx, ry)
        px, py = -ry / norm, rx / norm  # billboard span, facing the camera
        half = obj.width_m / 2.0
        corners = np.array([
            [rx - px * half, ry - py * half, 0.0],
            [rx + px * half, ry + py * half, 0.0],
            [rx - px * half, ry - py * half, obj.height_m],
            [rx + px * half, ry + py * half, obj.height_m],
        ])
        uv = camera.project_points(corners)
        box = _fill_billboard(img, uv[0], uv[1], uv[2], uv[3], obj.cls)
        if box is not None:
            boxes.append({"cls": obj.cls, "box": box, "dist_m": dist})
    return img, boxes


def to_gray(rgb: np.ndarray) -> np.ndarray:
    """RGB uint8 -> luma uint8 (ITU-R 601 weights)."""
    f = rgb.astype(np.float32)
    y = 0.299 * f[..., 0] + 0.587 * f[..., 1] + 0.114 * f[..., 2]
    return np.clip(np.rint(y), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# snowfall

@dataclass(frozen=True)
class SnowConfig:
    density: float = 0.01      # expected covered fraction of the frame
    radius_px: int = 2
    drift_px: float = 5.0      # downward motion per frame
    jitter_px: float = 1.0     # per-frame velocity jitter (std)
    start: int = 0             # first active frame index
    stop: int | None = None    # exclusive; None = open-ended

    def __post_init__(self):
        if not 0.0 <= self.density <= 0.2:
            raise ConfigError("snow density must be in [0, 0.2]")
        if self.radius_px < 1:
            raise ConfigError("snow radius must be >= 1 px")

    def active(self, frame_idx: int) -> bool:
        if self.density == 0.0:
            return False
        if frame_idx < self.start:
            return False
        return self.stop is None or frame_idx < self.stop


def _disc_offsets(radius: int) -> np.ndarray:
    r = int(radius)
    ys, xs = np.mgrid[-r:r + 1, -r:r + 1]
    keep = ys * ys + xs * xs <= r * r
    return np.stack([ys[keep], xs[keep]], axis=-1)


class SnowState:
    """Persistent particle slots so flakes drift coherently across frames."""

    def __init__(self, cfg: SnowConfig, width: int, height: int, rng: np.random.Generator):
        self.disc = _disc_offsets(cfg.radius_px)
        self.rate = cfg.density * width * height / len(self.disc)
        self.width = width
        self.height = height
        n = max(int(math.ceil(self.rate + 4.0 * math.sqrt(max(self.rate, 1.0)))), 1)
        self.pos = np.stack([rng.uniform(0, width, n), rng.uniform(0, height, n)], axis=-1)

    def advance(self, cfg: SnowConfig, rng: np.random.Generator) -> None:
        n = len(self.pos)
        self.pos[:, 0] += rng.normal(0.0, cfg.jitter_px, n)
        self.pos[:, 1] += cfg.drift_px + rng.normal(0.0, cfg.jitter_px, n)
        margin = cfg.radius_px + 1
        fell = self.pos[:, 1] > self.height + margin
        self.pos[fell, 1] -= self.height + 2 * margin
        self.pos[fell, 0] = rng.uniform(0, self.width, int(fell.sum()))
        self.pos[:, 0] = np.mod(self.pos[:, 0], self.width)


def inject_snow(frame: np.ndarray, cfg: SnowConfig, state: SnowState,
                rng: np.random.Generator, frame_idx: int) -> tuple[np.ndarray, bool]:
    """Draw this frame's flakes (count ~ Poisson(rate)); advance drift.

    Returns (frame, is_ood); the frame is modified only when flakes land.
    """
    if not cfg.active(frame_idx):
        return frame, False
    n = min(int(rng.poisson(state.rate)), len(state.pos))
    if n > 0:
        frame = frame.copy()
        h, w = frame.shape[:2]
        centers = np.rint(state.pos[:n]).astype(np.intp)
        pts = centers[:, None, ::-1] + state.disc[None, :, :]  # -> (y, x)
        ys = pts[..., 0].ravel()
        xs = pts[..., 1].ravel()
        keep = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        frame[ys[keep], xs[keep]] = SNOW_COLOR
    state.advance(cfg, rng)
    return frame, n > 0


# ---------------------------------------------------------------------------
# scripted routes and dataset generation

def scripted_route(track: Track, n_frames: int, dt: float, rng: np.random.Generator,
                   v: float = 0.22, lane_offset: float = -0.11,
                   wander: float = 0.04, wobble: float = 0.1,
                   v_var: float = 0.2) -> list[RobotState]:
    """Drive along the lane center with smooth seeded wander in offset,
    heading, and speed, approximating closed-loop motion diversity."""
    freqs = rng.uniform(0.15, 0.9, 5)        # cycles per meter
    phases = rng.uniform(0, 2 * math.pi, 5)
    amps = rng.uniform(0.3, 1.0, 5)
    amps /= amps[:3].sum() + 1e-9

    def mix(s, idx):
        return sum(amps[i] * math.sin(2 * math.pi * freqs[i] * s + phases[i]) for i in idx)

    states = []
    s = rng.uniform(0, track.length) if track.closed else 0.0
    for _ in range(n_frames):
        vi = v * (1.0 + v_var * math.sin(2 * math.pi * freqs[4] * s + phases[4]))
        d = lane_offset + wander * mix(s, (0, 1, 2))
        phi = wobble * mix(s, (1, 3))
        pos, heading = track.point_at(s)
        left = np.array([-math.sin(heading), math.cos(heading)])
        xy = pos + d * left
        states.append(RobotState(float(xy[0]), float(xy[1]), heading + phi, vi, 0.0))
        s += vi * dt
    return states


@dataclass(frozen=True)
class DatasetConfig:
    n_train: int = 2048
    n_videos: int = 8
    video_len: int = 300
    fps: float = 15.0
    # per-video snow density; zeros give clean control videos
    snow_densities: tuple[float, ...] = (0.008, 0.012, 0.018, 0.027,
                                         0.04, 0.055, 0.075, 0.1)
    snow_start: int = 80
    snow_len: int = 140
    snow_radius_px: int = 3
    snow_drift_px: float = 5.0

    def __post_init__(self):
        if self.n_videos != len(self.snow_densities):
            raise ConfigError("need one snow density per test video")


def _camera_meta(camera: CameraModel) -> dict:
    return {
        "width": camera.width, "height": camera.height,
        "focal": camera.focal, "cx": camera.cx, "cy": camera.cy,
        "height_m": camera.height_m, "tilt_rad": camera.tilt_rad,
        "ground_homography": camera.ground_homography().tolist(),
    }


def _write_manifest(path: str, camera: CameraModel, fps: float, seed: int,
                    records: list[dict]) -> dict:
    manifest = {
        "generator_version": GENERATOR_VERSION,
        "seed": int(seed),
        "fps": fps,
        "camera": _camera_meta(camera),
        "frames": records,
    }
    ts = [r["timestamp_ms"] for r in records]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ConfigError("frame timestamps must strictly increase")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")
    return manifest


def _render_sequence(world: WorldConfig, camera: CameraModel, states: list[RobotState],
                     out_dir: str, fps: float, seed: int, snow: SnowConfig | None,
                     snow_rng: np.random.Generator | None) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    state_snow = None
    if snow is not None and snow.density > 0:
        state_snow = SnowState(snow, camera.width, camera.height, snow_rng)
    records = []
    boxes_rows = []
    for i, rs in enumerate(states):
        frame, boxes = render(world, rs, camera)
        label = False
        if state_snow is not None:
            frame, label = inject_snow(frame, snow, state_snow, snow_rng, i)
        name = f"frame_{i:06d}.ppm"
        write_ppm(os.path.join(out_dir, name), frame)
        records.append({
            "path": name,
            "timestamp_ms": round(i * 1000.0 / fps, 3),
            "label": "OOD" if label else "ID",
            "pose": [rs.x, rs.y, rs.theta],
        })
        for b in boxes:
            boxes_rows.append((i, b["cls"], *b["box"]))
    if boxes_rows:
        with open(os.path.join(out_dir, "boxes.csv"), "w", encoding="utf-8") as f:
            f.write("frame,cls,x0,y0,x1,y1\n")
            for row in boxes_rows:
                f.write(f"{row[0]},{row[1]},{row[2]:.2f},{row[3]:.2f},{row[4]:.2f},{row[5]:.2f}\n")
    return _write_manifest(os.path.join(out_dir, "manifest.json"),
                           camera, fps, seed, records)


def generate_dataset(out_dir: str, world: WorldConfig, camera: CameraModel,
                     seed: int, cfg: DatasetConfig | None = None) -> dict:
    """Write the ID training sequence plus labeled test videos.

    Training uses an empty track (no objects, no snow), so it contains
    only ID frames. Each test video runs the same scripted controller
    with its own seeded wander and a snow window per the schedule.
    """
    cfg = cfg or DatasetConfig()
    os.makedirs(out_dir, exist_ok=True)
    train_world = replace(world, objects=())
    dt = 1.0 / cfg.fps

    route = scripted_route(train_world.track, cfg.n_train, dt, sub_rng(seed, "route.train"))
    train_manifest = _render_sequence(train_world, camera, route,
                                      os.path.join(out_dir, "train"),
                                      cfg.fps, seed, None, None)
    if any(r["label"] != "ID" for r in train_manifest["frames"]):
        raise ConfigError("training sequence must be all ID")

    videos = []
    for vi in range(cfg.n_videos):
        density = cfg.snow_densities[vi]
        snow = SnowConfig(density=density, radius_px=cfg.snow_radius_px,
                          drift_px=cfg.snow_drift_px,
                          start=cfg.snow_start, stop=cfg.snow_start + cfg.snow_len)
        route = scripted_route(train_world.track, cfg.video_len, dt,
                               sub_rng(seed, f"route.test{vi}"))
        _render_sequence(train_world, camera, route,
                         os.path.join(out_dir, f"test_{vi:02d}"),
                         cfg.fps, seed, snow, sub_rng(seed, f"snow.test{vi}"))
        videos.append(f"test_{vi:02d}")

    index = {"generator_version": GENERATOR_VERSION, "seed": int(seed),
             "train": "train", "videos": videos}
    with open(os.path.join(out_dir, "dataset.json"), "w", encoding="utf-8") as f:
        json.dump(index, f, indent=1, sort_keys=True)
        f.write("\n")
    return index


def load_manifest(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def manifest_frames(dir_path: str, manifest: dict) -> tuple[list[str], list[bool]]:
    """Frame file paths and boolean labels (True = OOD) from a manifest."""
    paths = [os.path.join(dir_path, r["path"]) for r in manifest["frames"]]
    labels = [r["label"] == "OOD" for r in manifest["frames"]]
    return paths, labels
