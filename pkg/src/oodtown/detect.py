"""Single-stage grid object detector over the three roadside classes.

One box per grid cell, YOLO-flavored: a small conv stack downsamples the
square input by 16, and each output cell predicts box offsets, scales, an
objectness logit, and class logits. Deliberately minimal; the point is the
input-size vs latency vs accuracy trade-off, not architecture fidelity.
"""

from __future__ import annotations

import dataclasses
import math
import time

import numpy as np
from scipy.special import expit

from . import modelio, nn, preproc, quant, sim
from .camera import CameraModel
from .errors import ArgumentError, TrainingError
from .rng import sub_rng

CLASSES = ("duckie", "cone", "duckiebot")
BACKGROUND = len(CLASSES)  # index 3 in confusion matrices
SIZES = (64, 96, 128, 160)

# raw head channels per cell
_CH_X, _CH_Y, _CH_W, _CH_H, _CH_OBJ = 0, 1, 2, 3, 4
_CH_CLS = 5


@dataclasses.dataclass(frozen=True)
class DetectorConfig:
    size: int = 160
    conf_threshold: float = 0.5
    nms_iou: float = 0.45
    epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.size % 16 != 0 or self.size < 32:
            raise ArgumentError(f"input size must be a multiple of 16 (>= 32), got {self.size}")
        if not 0.0 <= self.conf_threshold <= 1.0:
            raise ArgumentError("confidence threshold must be in [0, 1]")
        if not 0.0 <= self.nms_iou <= 1.0:
            raise ArgumentError("NMS IoU threshold must be in [0, 1]")

    @property
    def grid(self) -> int:
        return self.size // 16


@dataclasses.dataclass(frozen=True)
class Detection:
    """Axis-aligned box in normalized image coordinates."""
    cx: float
    cy: float
    w: float
    h: float
    cls_id: int
    conf: float


def build_detector(cfg: DetectorConfig) -> nn.ModelGraph:
    s = cfg.size
    specs = (
        nn.conv2d(3, 16, 3, 2, 1), nn.relu(),
        nn.conv2d(16, 32, 3, 2, 1), nn.relu(),
        nn.conv2d(32, 64, 3, 2, 1), nn.relu(),
        nn.conv2d(64, 64, 3, 2, 1), nn.relu(),
        nn.conv2d(64, 5 + len(CLASSES), 3, 1, 1),
    )
    model = nn.init_model((3, s, s), specs, sub_rng(cfg.seed, "det.init"))
    # start the objectness channel low: most grid cells are empty, and the
    # no-object pressure otherwise drives every confidence into the flat
    # tail of the sigmoid before the occupied cells can push back
    head = f"p{len(specs) - 1}.bias"
    bias = model.params[head].copy()
    bias[_CH_OBJ] = -2.5
    model.params[head] = bias
    return model


# ---------------------------------------------------------------------------
# decoding and box arithmetic

def _sigmoid(x):
    return expit(x)


def decode_grid(raw: np.ndarray, cfg: DetectorConfig) -> list[Detection]:
    """Raw head output [grid, grid, 8] -> thresholded detections (pre-NMS)."""
    raw = np.asarray(raw, dtype=np.float32)
    g = cfg.grid
    if raw.shape != (g, g, 5 + len(CLASSES)):
        raise ArgumentError(
            f"raw grid {list(raw.shape)} does not match [{g}, {g}, {5 + len(CLASSES)}]")
    conf = _sigmoid(raw[..., _CH_OBJ])
    rows, cols = np.nonzero(conf > cfg.conf_threshold)
    out: list[Detection] = []
    for r, c in zip(rows, cols):
        cell = raw[r, c]
        cx = (c + _sigmoid(cell[_CH_X])) / g
        cy = (r + _sigmoid(cell[_CH_Y])) / g
        w = _sigmoid(cell[_CH_W])
        h = _sigmoid(cell[_CH_H])
        # clamp the extents into the unit square
        x0, x1 = max(cx - w / 2, 0.0), min(cx + w / 2, 1.0)
        y0, y1 = max(cy - h / 2, 0.0), min(cy + h / 2, 1.0)
        if x1 <= x0 or y1 <= y0:
            continue
        cls_id = int(np.argmax(cell[_CH_CLS:]))
        out.append(Detection((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0,
                             cls_id, float(conf[r, c])))
    return out


def iou(a: Detection, b: Detection) -> float:
    ax0, ax1 = a.cx - a.w / 2, a.cx + a.w / 2
    ay0, ay1 = a.cy - a.h / 2, a.cy + a.h / 2
    bx0, bx1 = b.cx - b.w / 2, b.cx + b.w / 2
    by0, by1 = b.cy - b.h / 2, b.cy + b.h / 2
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def nms(dets: list[Detection], iou_threshold: float = 0.45) -> list[Detection]:
    """Greedy same-class suppression, highest confidence first."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].conf, i))
    keep: list[Detection] = []
    for i in order:
        d = dets[i]
        if all(k.cls_id != d.cls_id or iou(k, d) <= iou_threshold for k in keep):
            keep.append(d)
    return keep


def _to_uint8_input(frame: np.ndarray, size: int) -> np.ndarray:
    """RGB uint8 [H, W, 3] -> uint8 [3, size, size]."""
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ArgumentError("frame must be RGB [H, W, 3]")
    if frame.shape[:2] != (size, size):
        frame = preproc.resize(frame, (size, size), "bilinear")
    if frame.dtype != np.uint8:
        frame = np.clip(np.rint(frame), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(frame.transpose(2, 0, 1))


def _to_input(frame: np.ndarray, size: int) -> np.ndarray:
    """RGB uint8 [H, W, 3] -> float32 [3, size, size] in [0, 1]."""
    return _to_uint8_input(frame, size).astype(np.float32) / 255.0


def detect(model, frame: np.ndarray, cfg: DetectorConfig) -> list[Detection]:
    """Full path: resize, forward (float or int8 model), decode, NMS."""
    x = _to_input(frame, cfg.size)
    if isinstance(model, quant.QuantizedModel):
        raw = quant.qforward(model, x)
    else:
        raw = nn.forward(model, x)
    return nms(decode_grid(raw.transpose(1, 2, 0), cfg), cfg.nms_iou)


# ---------------------------------------------------------------------------
# synthetic scenes

def _normalize_boxes(boxes, render_size: int, min_box_px: float):
    gts = []
    for b in boxes:
        x0, y0, x1, y1 = b["box"]
        if x1 - x0 < min_box_px or y1 - y0 < min_box_px:
            continue
        gts.append((CLASSES.index(b["cls"]),
                    (x0 + x1) / 2 / render_size, (y0 + y1) / 2 / render_size,
                    (x1 - x0) / render_size, (y1 - y0) / render_size))
    return gts


def make_scenes(n: int, seed: int, render_size: int = 160,
                track: sim.Track | None = None, min_box_px: float = 4.0):
    """Render n square scenes with 0..3 roadside objects.

    Returns a list of (frame RGB uint8, [(cls_id, cx, cy, w, h), ...]) with
    boxes normalized to [0, 1]. Ground truth comes from the renderer, so
    off-screen and sub-pixel objects never produce labels. Objects sit
    0.25..0.65 m ahead; much past that they shrink below a grid cell.
    """
    if n < 1:
        raise ArgumentError("need at least one scene")
    rng = sub_rng(seed, "det.scenes")
    track = track or sim.stadium_track()
    cam = CameraModel.sized(render_size, render_size)
    scenes = []
    while len(scenes) < n:
        s0 = rng.uniform(0.0, track.length)
        pos, heading = track.point_at(s0)
        lat = -0.11 + rng.normal(0.0, 0.03)
        nx, ny = -math.sin(heading), math.cos(heading)
        robot = sim.RobotState(pos[0] + nx * lat, pos[1] + ny * lat,
                               heading + rng.normal(0.0, 0.12))
        n_obj = int(rng.integers(0, 4))
        objs = []
        ds = 0.25
        for _ in range(n_obj):
            ds += rng.uniform(0.0, 0.4)
            op, oh = track.point_at(s0 + ds)
            onx, ony = -math.sin(oh), math.cos(oh)
            olat = rng.uniform(-0.3, 0.3)
            cls = CLASSES[int(rng.integers(0, len(CLASSES)))]
            objs.append(sim.WorldObject(cls, op[0] + onx * olat, op[1] + ony * olat))
            ds += 0.3
        world = sim.WorldConfig(track=track, objects=tuple(objs))
        frame, boxes = sim.render(world, robot, cam)
        gts = _normalize_boxes(boxes, render_size, min_box_px)
        if n_obj > 0 and not gts:
            continue  # placed objects all invisible; resample the scene
        scenes.append((frame, gts))
    return scenes


def make_duck_scenes(n: int, seed: int, render_size: int = 160,
                     track: sim.Track | None = None,
                     dist_range: tuple[float, float] = (0.22, 0.5)):
    """Render n scenes with exactly one duckie in clear view ahead.

    Used for the single-class detection-rate evaluation; resamples until
    the duck is visible with a box at least half a grid cell wide.
    """
    if n < 1:
        raise ArgumentError("need at least one scene")
    rng = sub_rng(seed, "det.duck")
    track = track or sim.stadium_track()
    cam = CameraModel.sized(render_size, render_size)
    min_px = render_size / 16 / 2
    scenes = []
    while len(scenes) < n:
        s0 = rng.uniform(0.0, track.length)
        pos, heading = track.point_at(s0)
        lat = -0.11 + rng.normal(0.0, 0.03)
        nx, ny = -math.sin(heading), math.cos(heading)
        robot = sim.RobotState(pos[0] + nx * lat, pos[1] + ny * lat,
                               heading + rng.normal(0.0, 0.08))
        op, oh = track.point_at(s0 + rng.uniform(*dist_range))
        onx, ony = -math.sin(oh), math.cos(oh)
        olat = rng.uniform(-0.25, 0.2)
        duck = sim.WorldObject("duckie", op[0] + onx * olat, op[1] + ony * olat)
        world = sim.WorldConfig(track=track, objects=(duck,))
        frame, boxes = sim.render(world, robot, cam)
        gts = _normalize_boxes(boxes, render_size, min_px)
        if len(gts) != 1:
            continue
        scenes.append((frame, gts))
    return scenes


# ---------------------------------------------------------------------------
# training

_L_COORD = 5.0
_L_NOOBJ = 0.5


def _build_targets(gts_per_scene, g: int):
    n = len(gts_per_scene)
    resp = np.zeros((n, g, g), dtype=bool)
    box_t = np.zeros((n, g, g, 4), dtype=np.float32)
    cls_t = np.zeros((n, g, g), dtype=np.int64)
    area = np.zeros((n, g, g), dtype=np.float32)
    for i, gts in enumerate(gts_per_scene):
        for cls_id, cx, cy, w, h in gts:
            col = min(int(cx * g), g - 1)
            row = min(int(cy * g), g - 1)
            if resp[i, row, col] and area[i, row, col] >= w * h:
                continue  # cell already owns a bigger box
            resp[i, row, col] = True
            area[i, row, col] = w * h
            box_t[i, row, col] = (cx * g - col, cy * g - row, w, h)
            cls_t[i, row, col] = cls_id
    return resp, box_t, cls_t


def _detector_loss_grad(raw: np.ndarray, resp, box_t, cls_t):
    """raw [B, G, G, 8] -> (scalar loss, d loss / d raw)."""
    b = raw.shape[0]
    s = _sigmoid(raw[..., :5])
    logits = raw[..., _CH_CLS:]
    m = logits.max(axis=-1, keepdims=True)
    p = np.exp(logits - m)
    p /= p.sum(axis=-1, keepdims=True)

    d_s = np.zeros_like(s)
    box_err = s[..., :4] - box_t
    loss = _L_COORD * float(np.sum(box_err[resp] ** 2)) / b
    d_s[..., :4] = np.where(resp[..., None], 2.0 * _L_COORD * box_err, 0.0) / b

    obj = s[..., _CH_OBJ]
    loss += float(np.sum((obj[resp] - 1.0) ** 2)) / b
    loss += _L_NOOBJ * float(np.sum(obj[~resp] ** 2)) / b
    d_s[..., _CH_OBJ] = np.where(resp, 2.0 * (obj - 1.0), 2.0 * _L_NOOBJ * obj) / b

    onehot = np.eye(len(CLASSES), dtype=np.float32)[cls_t]
    p_resp = np.clip(p[resp], 1e-12, None)
    loss += float(-np.sum(onehot[resp] * np.log(p_resp))) / b

    d_raw = np.zeros_like(raw)
    d_raw[..., :5] = d_s * s * (1.0 - s)
    d_raw[..., _CH_CLS:] = np.where(resp[..., None], p - onehot, 0.0) / b
    return loss, d_raw


def train_detector(scenes, cfg: DetectorConfig):
    """Fit the grid head on rendered scenes; returns (model, loss history).

    The scene list is doubled with horizontal mirrors before training.
    Frames stay uint8 until batch assembly to keep memory flat.
    """
    if not scenes:
        raise ArgumentError("scene list is empty")
    g = cfg.grid
    frames = []
    gts_all = []
    for frame, gts in scenes:
        small = _to_uint8_input(frame, cfg.size)
        frames.append(small)
        gts_all.append(gts)
        frames.append(small[:, :, ::-1].copy())
        gts_all.append([(c, 1.0 - cx, cy, w, h) for c, cx, cy, w, h in gts])
    x8 = np.stack(frames)
    resp, box_t, cls_t = _build_targets(gts_all, g)
    model = build_detector(cfg)
    rng = sub_rng(cfg.seed, "det.train")
    n = len(frames)
    opt: dict | None = None
    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            xb = x8[idx].astype(np.float32) / 255.0
            raw, cache = nn.forward_cached(model, xb)
            raw_grid = raw.transpose(0, 2, 3, 1)
            loss, d_raw = _detector_loss_grad(raw_grid, resp[idx], box_t[idx], cls_t[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"loss diverged to {loss}", epoch=epoch + 1)
            loss_sum += loss * len(idx)
            grads, _ = nn.backward(model, cache, d_raw.transpose(0, 3, 1, 2))
            model, opt = nn.adam_step(model, grads, cfg.lr, opt)
        history.append(loss_sum / n)
    return model, history


# ---------------------------------------------------------------------------
# evaluation

def confusion_matrix(preds_per_image, gts_per_image,
                     iou_threshold: float = 0.5) -> np.ndarray:
    """4x4 counts, rows = ground truth, cols = prediction; index 3 is
    background. Predictions match the best unmatched GT (any class) with
    IoU >= threshold, greedily by confidence."""
    if len(preds_per_image) != len(gts_per_image):
        raise ArgumentError("prediction and ground-truth lists differ in length")
    cm = np.zeros((4, 4), dtype=np.int64)
    for preds, gts in zip(preds_per_image, gts_per_image):
        gt_boxes = [Detection(cx, cy, w, h, cls_id, 1.0)
                    for cls_id, cx, cy, w, h in gts]
        used = [False] * len(gt_boxes)
        for d in sorted(preds, key=lambda d: -d.conf):
            best, best_iou = -1, iou_threshold
            for j, gt in enumerate(gt_boxes):
                if used[j]:
                    continue
                v = iou(d, gt)
                if v >= best_iou:
                    best, best_iou = j, v
            if best >= 0:
                used[best] = True
                cm[gt_boxes[best].cls_id, d.cls_id] += 1
            else:
                cm[BACKGROUND, d.cls_id] += 1
        for j, gt in enumerate(gt_boxes):
            if not used[j]:
                cm[gt.cls_id, BACKGROUND] += 1
    return cm


def row_normalize(cm: np.ndarray) -> np.ndarray:
    """Confusion counts -> row percentages (rows with no counts stay 0)."""
    cm = np.asarray(cm, dtype=np.float64)
    sums = cm.sum(axis=1, keepdims=True)
    return np.divide(100.0 * cm, sums, out=np.zeros_like(cm), where=sums > 0)


def class_recall(cm: np.ndarray, cls_id: int) -> float:
    row = cm[cls_id]
    total = int(row.sum())
    return float(row[cls_id]) / total if total else 0.0


def evaluate_detector(model, scenes, cfg: DetectorConfig) -> np.ndarray:
    preds = [detect(model, frame, cfg) for frame, _ in scenes]
    return confusion_matrix(preds, [gts for _, gts in scenes])


def size_latency_sweep(models: dict[int, quant.QuantizedModel], scenes,
                       reps: int = 100, warmup: int = 5):
    """Per input size: mean timed int8 inference (ms) plus the confusion
    matrix on the given scenes. Returns rows sorted by size."""
    if reps < 1:
        raise ArgumentError("need at least one timed repetition")
    rows = []
    for size in sorted(models):
        qm = models[size]
        cfg = DetectorConfig(size=size)
        inputs = [_to_input(frame, size) for frame, _ in scenes]
        for i in range(warmup):
            quant.qforward(qm, inputs[i % len(inputs)])
        t0 = time.perf_counter()
        for i in range(reps):
            quant.qforward(qm, inputs[i % len(inputs)])
        acet_ms = (time.perf_counter() - t0) * 1000.0 / reps
        cm = evaluate_detector(qm, scenes, cfg)
        rows.append({"size": size, "acet_ms": acet_ms, "matrix": cm})
    return rows


# ---------------------------------------------------------------------------
# persistence and reports

def save_detector(path: str, model: nn.ModelGraph, size: int) -> None:
    modelio.save_models(path, {"": model}, {"size": float(size)})


def load_detector(path: str):
    """Returns (model, DetectorConfig) for float or int8 files."""
    raw = modelio.read_oodm(path)
    extras = {n[5:]: float(e[0]) for n, e in raw.items()
              if n.startswith("meta.") and isinstance(e, np.ndarray)}
    if "size" not in extras:
        raise ArgumentError(f"{path}: missing meta.size")
    cfg = DetectorConfig(size=int(extras["size"]))
    if extras.get("quantized"):
        models, _ = quant.load_quantized(path)
    else:
        models, _ = modelio.load_models(path)
    if "" not in models:
        raise ArgumentError(f"{path}: expected a single unnamed model")
    return models[""], cfg


def save_quant_detector(path: str, qm: quant.QuantizedModel, size: int) -> None:
    quant.save_quantized(path, {"": qm}, {"size": float(size)})


def write_detections_csv(path: str, rows) -> None:
    """rows: iterable of (frame_id, Detection)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("frame_id,class,conf,cx,cy,w,h\n")
        for frame_id, d in rows:
            f.write(f"{frame_id},{CLASSES[d.cls_id]},{d.conf:.4f},"
                    f"{d.cx:.6f},{d.cy:.6f},{d.w:.6f},{d.h:.6f}\n")
