"""Independent reference implementations used to pin down expected values.

Everything here is written the slow, obvious way (explicit loops, Python
integers, brute-force search) so that agreement with the fast library
code is meaningful evidence rather than a tautology.
"""
from __future__ import annotations

import numpy as np


# ---------------------------------------------------------------------------
# dense / conv references (naive loops)

def dense_direct(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y[i, n] = sum_k x[i, k] w[n, k] + b[n], accumulated in float64."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = np.zeros((x.shape[0], w.shape[0]))
    for i in range(x.shape[0]):
        for n in range(w.shape[0]):
            acc = 0.0
            for k in range(w.shape[1]):
                acc += x[i, k] * float(w[n, k])
            out[i, n] = acc + float(b[n])
    return out


def conv2d_direct(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                  stride: int = 1, pad: int = 0) -> np.ndarray:
    """Plain sliding-window convolution, NCHW, float64 accumulation."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    bsz, ic, h, ww = x.shape
    oc, ic2, k, _ = w.shape
    assert ic == ic2
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (ww + 2 * pad - k) // stride + 1
    out = np.zeros((bsz, oc, oh, ow))
    for bi in range(bsz):
        for o in range(oc):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for c in range(ic):
                        for ki in range(k):
                            for kj in range(k):
                                acc += (x[bi, c, i * stride + ki, j * stride + kj]
                                        * float(w[o, c, ki, kj]))
                    out[bi, o, i, j] = acc + float(b[o])
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# finite differences

def numeric_grad(f, x: np.ndarray, h: float = 1e-3, indices=None) -> dict:
    """Central-difference partials of scalar f at selected flat indices.

    Returns {flat index: df/dx_i}. Perturbs a float64 copy so the step is
    not swallowed by float32 rounding before f sees it.
    """
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    grads = {}
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x.reshape(x.shape))
        flat[i] = orig - h
        fm = f(x.reshape(x.shape))
        flat[i] = orig
        grads[int(i)] = (fp - fm) / (2.0 * h)
    return grads


# ---------------------------------------------------------------------------
# block-matching flow

def block_match_flow(prev: np.ndarray, nxt: np.ndarray, max_disp: int = 4,
                     block: int = 8, step: int = 4):
    """Integer-displacement SSD block matching.

    Returns (centers [N,2] as (row, col), displacements [N,2] as (dx, dy)),
    matching the (horizontal, vertical) channel order of the flow fields.
    Only blocks whose full search window stays inside both images are used.
    """
    prev = np.asarray(prev, dtype=np.float64)
    nxt = np.asarray(nxt, dtype=np.float64)
    h, w = prev.shape
    half = block // 2
    margin = half + max_disp
    centers, disps = [], []
    for i in range(margin, h - margin, step):
        for j in range(margin, w - margin, step):
            ref = prev[i - half:i + half, j - half:j + half]
            best = None
            best_d = (0, 0)
            for dv in range(-max_disp, max_disp + 1):
                for du in range(-max_disp, max_disp + 1):
                    cand = nxt[i + dv - half:i + dv + half,
                               j + du - half:j + du + half]
                    ssd = float(np.sum((ref - cand) ** 2))
                    if best is None or ssd < best:
                        best = ssd
                        best_d = (du, dv)
            centers.append((i, j))
            disps.append(best_d)
    return np.asarray(centers), np.asarray(disps, dtype=np.float64)


def mean_endpoint_error(flow_field: np.ndarray, centers: np.ndarray,
                        disps: np.ndarray) -> float:
    """Mean euclidean distance between flow vectors and reference
    displacements at the given (row, col) centers."""
    errs = []
    for (i, j), (du, dv) in zip(centers, disps):
        fu, fv = flow_field[i, j]
        errs.append(np.hypot(fu - du, fv - dv))
    return float(np.mean(errs))


# ---------------------------------------------------------------------------
# pure-integer quantized linear reference

def qdense_int_ref(qx: np.ndarray, zx: int, qw: np.ndarray, zw: int):
    """Integer accumulators of an affine-quantized dense layer, using
    Python ints throughout. qx: [B,K] int8 values, qw: [N,K]."""
    qx = np.asarray(qx)
    qw = np.asarray(qw)
    bsz, kk = qx.shape
    nn_ = qw.shape[0]
    acc = np.zeros((bsz, nn_), dtype=np.int64)
    for i in range(bsz):
        for n in range(nn_):
            s = 0
            for k in range(kk):
                s += (int(qx[i, k]) - zx) * (int(qw[n, k]) - zw)
            assert -(2 ** 31) <= s < 2 ** 31, "accumulator left int32 range"
            acc[i, n] = s
    return acc


def quantize_ref(x: np.ndarray, scale: float, zp: int) -> np.ndarray:
    """Reference affine quantizer: round half away from zero, then clamp."""
    q = np.empty(x.shape, dtype=np.int64)
    flat_in = np.asarray(x, dtype=np.float64).reshape(-1)
    flat_out = q.reshape(-1)
    for i, v in enumerate(flat_in):
        r = v / scale
        r = np.floor(r + 0.5) if r >= 0 else np.ceil(r - 0.5)
        flat_out[i] = min(127, max(-128, int(r) + zp))
    return q.astype(np.int8)


# ---------------------------------------------------------------------------
# misc numeric references

def kl_standard_normal(mu: np.ndarray, logvar: np.ndarray) -> float:
    """Closed-form KL(N(mu, sigma^2) || N(0, 1)) summed over dims, averaged
    over the batch; computed term by term."""
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    logvar = np.atleast_2d(np.asarray(logvar, dtype=np.float64))
    total = 0.0
    for b in range(mu.shape[0]):
        for j in range(mu.shape[1]):
            total += -0.5 * (1.0 + logvar[b, j] - mu[b, j] ** 2
                             - np.exp(logvar[b, j]))
    return total / mu.shape[0]


def quantile_linear(values, q: float) -> float:
    """Empirical quantile with linear interpolation between order stats,
    done by hand on a sorted copy."""
    xs = sorted(float(v) for v in values)
    if not 0.0 < q <= 1.0:
        raise ValueError("q must be in (0, 1]")
    pos = q * (len(xs) - 1)
    lo = int(np.floor(pos))
    hi = int(np.ceil(pos))
    frac = pos - lo
    return xs[lo] * (1.0 - frac) + xs[hi] * frac


def nms_bruteforce(dets, iou_fn, thr: float = 0.45):
    """Keep-the-best suppression by repeated scan over the remainder."""
    remaining = sorted(dets, key=lambda d: -d.score)
    kept = []
    while remaining:
        best = remaining.pop(0)
        kept.append(best)
        remaining = [d for d in remaining if iou_fn(best, d) <= thr]
    return kept


def bilinear_sample(img: np.ndarray, y: float, x: float) -> float:
    """Sample img at fractional (y, x) with edge clamping."""
    h, w = img.shape[:2]
    y = min(max(y, 0.0), h - 1.0)
    x = min(max(x, 0.0), w - 1.0)
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    fy, fx = y - y0, x - x0
    return ((1 - fy) * (1 - fx) * img[y0, x0] + (1 - fy) * fx * img[y0, x1]
            + fy * (1 - fx) * img[y1, x0] + fy * fx * img[y1, x1])
