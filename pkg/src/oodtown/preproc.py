"""Flow preprocessing: resize, stacking, normalization, window labels.

A flow field is a float32 array [H, W, 2] holding (dx, dy) per pixel in
pixels/frame. A gray frame is uint8 [H, W]. The detector input is a
FlowStack: k resized flows concatenated channel-wise, oldest first, as
(dx, dy) pairs, then squashed to [-1, 1] by clamping at V_MAX px/frame.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError

# the four candidate detector input sizes, (height, width)
SIZES: tuple[tuple[int, int], ...] = ((30, 40), (60, 80), (90, 120), (120, 160))
INTERPS = ("nearest", "bilinear")
V_MAX = 8.0  # px/frame; calibrated to the simulator's fastest ego-motion


@dataclass(frozen=True)
class PreprocConfig:
    """Detector input recipe: target size, flow count, interpolation."""
    size: tuple[int, int] = (60, 80)
    flows: int = 5
    interp: str = "bilinear"
    v_max: float = V_MAX

    def __post_init__(self):
        if tuple(self.size) not in SIZES:
            raise ArgumentError(f"size {self.size} not one of {list(SIZES)}")
        if not 1 <= int(self.flows) <= 16:
            raise ArgumentError(f"flow count {self.flows} outside [1, 16]")
        if self.interp not in INTERPS:
            raise ArgumentError(f"interpolation {self.interp!r} not one of {list(INTERPS)}")
        if self.v_max <= 0:
            raise ArgumentError("v_max must be positive")

    @property
    def stack_dims(self) -> tuple[int, int, int]:
        return (2 * self.flows, self.size[0], self.size[1])


def _nearest_index(n_out: int, n_in: int) -> np.ndarray:
    # center of each output cell mapped back, then floor
    idx = np.floor((np.arange(n_out) + 0.5) * (n_in / n_out)).astype(np.intp)
    return np.clip(idx, 0, n_in - 1)


def _resize_nearest(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    yi = _nearest_index(out_hw[0], img.shape[0])
    xi = _nearest_index(out_hw[1], img.shape[1])
    return img[yi][:, xi]


def _resize_bilinear(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    ih, iw = img.shape[:2]
    oh, ow = out_hw
    fy = np.clip((np.arange(oh) + 0.5) * (ih / oh) - 0.5, 0.0, ih - 1.0)
    fx = np.clip((np.arange(ow) + 0.5) * (iw / ow) - 0.5, 0.0, iw - 1.0)
    y0 = np.floor(fy).astype(np.intp)
    x0 = np.floor(fx).astype(np.intp)
    y1 = np.minimum(y0 + 1, ih - 1)
    x1 = np.minimum(x0 + 1, iw - 1)
    wy = (fy - y0).astype(np.float32)
    wx = (fx - x0).astype(np.float32)
    im = np.asarray(img, dtype=np.float32)
    flat = im.ndim == 2
    if flat:
        im = im[..., None]
    rows = im[y0] * (1.0 - wy)[:, None, None] + im[y1] * wy[:, None, None]
    out = rows[:, x0] * (1.0 - wx)[None, :, None] + rows[:, x1] * wx[None, :, None]
    return out[..., 0] if flat else out


def resize(img: np.ndarray, out_hw: tuple[int, int], interp: str = "bilinear") -> np.ndarray:
    """Resize a gray frame [H,W] or flow field [H,W,2] to out_hw.

    Nearest picks the source pixel under each output-cell center; bilinear
    blends the 4 neighbors with half-pixel center alignment. Flow vectors
    are additionally rescaled by the size ratio per axis, since a motion
    of d pixels in the source spans d * out/in pixels in the target.
    """
    oh, ow = int(out_hw[0]), int(out_hw[1])
    if oh < 1 or ow < 1:
        raise ArgumentError(f"target size {out_hw} must be >= 1 in both extents")
    if interp not in INTERPS:
        raise ArgumentError(f"interpolation {interp!r} not one of {list(INTERPS)}")
    img = np.asarray(img)
    if img.ndim not in (2, 3):
        raise ArgumentError("resize expects [H,W] or [H,W,C]")
    is_flow = img.ndim == 3 and img.shape[2] == 2 and img.dtype.kind == "f"
    src_dtype = img.dtype
    out = _resize_nearest(img, (oh, ow)) if interp == "nearest" else _resize_bilinear(img, (oh, ow))
    if is_flow:
        out = out.astype(np.float32).copy()
        out[..., 0] *= ow / img.shape[1]
        out[..., 1] *= oh / img.shape[0]
        return out
    if src_dtype == np.uint8 and out.dtype != np.uint8:
        out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out


def build_stack(flows: list[np.ndarray], config: PreprocConfig) -> np.ndarray:
    """k flow fields -> normalized float32 tensor [2k, H, W], oldest first."""
    if len(flows) != config.flows:
        raise ArgumentError(f"expected {config.flows} flows, got {len(flows)}")
    dims = flows[0].shape
    chans = []
    for f in flows:
        f = np.asarray(f, dtype=np.float32)
        if f.shape != dims or f.ndim != 3 or f.shape[2] != 2:
            raise ArgumentError("flows must share dims [H, W, 2]")
        if f.shape[:2] != tuple(config.size):
            f = resize(f, config.size, config.interp)
        chans.append(f[..., 0])
        chans.append(f[..., 1])
    stack = np.stack(chans, axis=0) / np.float32(config.v_max)
    return np.clip(stack, -1.0, 1.0).astype(np.float32)


def label_window(frame_labels) -> bool:
    """Window label from per-frame labels (True = OOD): OOD iff any frame is.

    Snow onset must be flagged as soon as it touches any frame in the span.
    """
    labels = list(frame_labels)
    if not labels:
        raise ArgumentError("label_window needs at least one frame label")
    return any(bool(v) for v in labels)


def window_dataset(flows: list[np.ndarray], frame_labels, config: PreprocConfig,
                   stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Slide a k-flow window over a video's flows.

    flows[i] connects frame i to frame i+1, so a window of flows
    [i, i+k) spans frames [i, i+k] and takes their k+1 labels.
    Returns (stacks [N, 2k, H, W], labels [N] bool).
    """
    k = config.flows
    if len(frame_labels) != len(flows) + 1:
        raise ArgumentError("need one frame label per frame (flows + 1)")
    stacks, labels = [], []
    for i in range(0, len(flows) - k + 1, stride):
        stacks.append(build_stack(flows[i:i + k], config))
        labels.append(label_window(frame_labels[i:i + k + 1]))
    if not stacks:
        return (np.zeros((0,) + config.stack_dims, dtype=np.float32),
                np.zeros(0, dtype=bool))
    return np.stack(stacks), np.asarray(labels, dtype=bool)
