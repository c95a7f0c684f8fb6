"""Dense optical flow via iterative quadratic polynomial expansion.

Each frame neighborhood is fit with f(x) ~ x^T A x + b^T x + c under a
Gaussian applicability weight; a shift by d turns b into b - 2 A d, so d
solves A d = (b0 - b1) / 2. Per-pixel normal equations are accumulated
into a 5-channel M field, box-smoothed over the window, and solved with
a small regularizer. A coarse-to-fine pyramid handles displacements
larger than the fit neighborhood.

Flow convention: prev[y, x] ~ next[y + flow[y,x,1], x + flow[y,x,0]].
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .errors import ArgumentError
from .preproc import _resize_bilinear

MIN_LEVEL_SIZE = 32  # stop adding pyramid levels below this extent
BORDER_TAPER = (0.14, 0.14, 0.4472, 0.4472, 0.4472)


@dataclass(frozen=True)
class FlowParams:
    pyr_scale: float = 0.5
    levels: int = 3
    window: int = 15
    iterations: int = 3
    poly_n: int = 5
    poly_sigma: float = 1.1

    def __post_init__(self):
        if not 0.0 < self.pyr_scale < 1.0:
            raise ArgumentError("pyr_scale must be in (0, 1)")
        if self.levels < 1 or self.iterations < 1:
            raise ArgumentError("levels and iterations must be >= 1")
        if self.window < 3 or self.window % 2 == 0:
            raise ArgumentError("window must be odd and >= 3")
        if self.poly_n < 2:
            raise ArgumentError("poly_n must be >= 2")


@lru_cache(maxsize=8)
def _poly_consts(n: int, sigma: float):
    """Gaussian applicability kernels and the needed inverse-G elements.

    G is the 6x6 basis Gram matrix for {1, x, y, x^2, y^2, xy}; by its
    symmetry only four inverse elements survive in the projection.
    """
    xs = np.arange(-n, n + 1, dtype=np.float64)
    g = np.exp(-xs * xs / (2.0 * sigma * sigma))
    g /= g.sum()
    xg = xs * g
    xxg = xs * xs * g

    G = np.zeros((6, 6))
    for y in range(-n, n + 1):
        for x in range(-n, n + 1):
            w = g[y + n] * g[x + n]
            G[0, 0] += w
            G[1, 1] += w * x * x
            G[3, 3] += w * x ** 4
            G[5, 5] += w * x * x * y * y
    G[2, 2] = G[0, 3] = G[0, 4] = G[3, 0] = G[4, 0] = G[1, 1]
    G[4, 4] = G[3, 3]
    G[3, 4] = G[4, 3] = G[5, 5]
    invG = np.linalg.inv(G)
    ig = (invG[1, 1], invG[0, 3], invG[3, 3], invG[5, 5])
    return g.astype(np.float32), xg.astype(np.float32), xxg.astype(np.float32), ig


def poly_expand(img: np.ndarray, n: int, sigma: float) -> np.ndarray:
    """Per-pixel quadratic fit coefficients, channels [by, bx, ayy, axx, axy]."""
    g, xg, xxg, (ig11, ig03, ig33, ig55) = _poly_consts(n, float(sigma))
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape

    # vertical pass: plain / antisymmetric / x^2-weighted smoothing
    pad = np.pad(img, ((n, n), (0, 0)), mode="edge")
    t0 = g[n] * img
    t1 = np.zeros_like(img)
    t2 = np.zeros_like(img)
    for k in range(1, n + 1):
        up = pad[n - k:n - k + h]
        dn = pad[n + k:n + k + h]
        s = up + dn
        t0 += g[n + k] * s
        t1 += xg[n + k] * (dn - up)
        t2 += xxg[n + k] * s

    # horizontal pass
    p0 = np.pad(t0, ((0, 0), (n, n)), mode="edge")
    p1 = np.pad(t1, ((0, 0), (n, n)), mode="edge")
    p2 = np.pad(t2, ((0, 0), (n, n)), mode="edge")
    b1 = g[n] * t0
    b2 = np.zeros_like(img)
    b3 = g[n] * t1
    b4 = np.zeros_like(img)
    b5 = g[n] * t2
    b6 = np.zeros_like(img)
    for k in range(1, n + 1):
        l0, r0 = p0[:, n - k:n - k + w], p0[:, n + k:n + k + w]
        l1, r1 = p1[:, n - k:n - k + w], p1[:, n + k:n + k + w]
        l2, r2 = p2[:, n - k:n - k + w], p2[:, n + k:n + k + w]
        b1 += g[n + k] * (l0 + r0)
        b4 += xxg[n + k] * (l0 + r0)
        b2 += xg[n + k] * (r0 - l0)
        b3 += g[n + k] * (l1 + r1)
        b6 += xg[n + k] * (r1 - l1)
        b5 += g[n + k] * (l2 + r2)

    out = np.empty((h, w, 5), dtype=np.float32)
    out[..., 0] = b3 * ig11            # linear y
    out[..., 1] = b2 * ig11            # linear x
    out[..., 2] = b1 * ig03 + b5 * ig33  # quadratic y^2
    out[..., 3] = b1 * ig03 + b4 * ig33  # quadratic x^2
    out[..., 4] = b6 * ig55            # cross xy
    return out


def _border_weights(h: int, w: int) -> np.ndarray:
    def axis(n):
        t = np.ones(n, dtype=np.float32)
        m = min(len(BORDER_TAPER), n)
        for i in range(m):
            t[i] *= BORDER_TAPER[i]
            t[n - 1 - i] *= BORDER_TAPER[i]
        return t
    return axis(h)[:, None] * axis(w)[None, :]


def _update_matrices(r0: np.ndarray, r1: np.ndarray, flow: np.ndarray,
                     taper: np.ndarray) -> np.ndarray:
    """Per-pixel normal equations for the displacement solve, channels
    [g11, g12, g22, h1, h2] where G (dy,dx) = h."""
    h, w = flow.shape[:2]
    gy, gx = np.mgrid[0:h, 0:w]
    fx = gx + flow[..., 0]
    fy = gy + flow[..., 1]
    valid = (fx >= 0) & (fx <= w - 1) & (fy >= 0) & (fy <= h - 1)
    # clamp the base corner, then take fractions against it so that
    # exact-edge samples (frac 0 or 1) stay in range
    xc = np.clip(np.floor(fx), 0, w - 2).astype(np.intp)
    yc = np.clip(np.floor(fy), 0, h - 2).astype(np.intp)
    ax = (fx - xc).astype(np.float32)
    ay = (fy - yc).astype(np.float32)
    a00 = ((1 - ax) * (1 - ay))[..., None]
    a01 = (ax * (1 - ay))[..., None]
    a10 = ((1 - ax) * ay)[..., None]
    a11 = (ax * ay)[..., None]
    samp = (a00 * r1[yc, xc] + a01 * r1[yc, xc + 1]
            + a10 * r1[yc + 1, xc] + a11 * r1[yc + 1, xc + 1])

    # A averaged between frames; where the displaced sample leaves the
    # image, fall back to the reference frame alone
    r4 = np.where(valid, 0.5 * (r0[..., 2] + samp[..., 2]), r0[..., 2])
    r5 = np.where(valid, 0.5 * (r0[..., 3] + samp[..., 3]), r0[..., 3])
    r6 = np.where(valid, 0.25 * (r0[..., 4] + samp[..., 4]), 0.5 * r0[..., 4])
    # unobservable counterparts contribute no displacement evidence:
    # their rhs reduces to the fold-in term, a vote for the current flow
    db_y = np.where(valid, 0.5 * (r0[..., 0] - samp[..., 0]), 0.0)
    db_x = np.where(valid, 0.5 * (r0[..., 1] - samp[..., 1]), 0.0)
    dx = flow[..., 0]
    dy = flow[..., 1]
    # rhs folds the already-applied displacement back in, so the solve
    # below yields total displacement, not an increment
    r2 = db_y + r4 * dy + r6 * dx
    r3 = db_x + r6 * dy + r5 * dx

    r2 = r2 * taper
    r3 = r3 * taper
    r4 = r4 * taper
    r5 = r5 * taper
    r6 = r6 * taper

    m = np.empty((h, w, 5), dtype=np.float32)
    m[..., 0] = r4 * r4 + r6 * r6
    m[..., 1] = (r4 + r5) * r6
    m[..., 2] = r5 * r5 + r6 * r6
    m[..., 3] = r4 * r2 + r6 * r3
    m[..., 4] = r6 * r2 + r5 * r3
    return m


def _solve_flow(m: np.ndarray) -> np.ndarray:
    g11, g12, g22 = m[..., 0], m[..., 1], m[..., 2]
    h1, h2 = m[..., 3], m[..., 4]
    idet = 1.0 / (g11 * g22 - g12 * g12 + 1e-3)
    flow = np.empty(m.shape[:2] + (2,), dtype=np.float32)
    flow[..., 0] = (g11 * h2 - g12 * h1) * idet
    flow[..., 1] = (g22 * h1 - g12 * h2) * idet
    return flow


def _gauss_blur(img: np.ndarray, ksize: int, sigma: float) -> np.ndarray:
    if sigma <= 0:
        sigma = 0.3 * ((ksize - 1) * 0.5 - 1.0) + 0.8
    xs = np.arange(ksize, dtype=np.float64) - (ksize - 1) / 2.0
    k = np.exp(-xs * xs / (2.0 * sigma * sigma))
    k = (k / k.sum()).astype(np.float32)
    out = ndimage.correlate1d(img, k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def farneback_flow(prev: np.ndarray, nxt: np.ndarray,
                   params: FlowParams | None = None) -> np.ndarray:
    """Dense displacement field from prev to nxt, float32 [H, W, 2]."""
    p = params or FlowParams()
    prev = np.asarray(prev, dtype=np.float32)
    nxt = np.asarray(nxt, dtype=np.float32)
    if prev.ndim != 2 or prev.shape != nxt.shape:
        raise ArgumentError("frames must be 2D with equal dims")
    h, w = prev.shape
    if min(h, w) < p.window:
        raise ArgumentError(f"frame {h}x{w} smaller than the {p.window}px window")

    n_down = 0
    scale = 1.0
    while n_down < p.levels:
        scale *= p.pyr_scale
        if w * scale < MIN_LEVEL_SIZE or h * scale < MIN_LEVEL_SIZE:
            break
        n_down += 1

    flow: np.ndarray | None = None
    for k in range(n_down, -1, -1):
        lscale = p.pyr_scale ** k
        lw = int(round(w * lscale))
        lh = int(round(h * lscale))
        sigma = (1.0 / lscale - 1.0) * 0.5
        ksize = max(int(round(sigma * 5)) | 1, 3)

        fa = _gauss_blur(prev, ksize, sigma)
        fb = _gauss_blur(nxt, ksize, sigma)
        if (lh, lw) != (h, w):
            fa = _resize_bilinear(fa, (lh, lw))
            fb = _resize_bilinear(fb, (lh, lw))

        if flow is None:
            flow = np.zeros((lh, lw, 2), dtype=np.float32)
        else:
            flow = _resize_bilinear(flow, (lh, lw)) * np.float32(1.0 / p.pyr_scale)

        r0 = poly_expand(fa, p.poly_n, p.poly_sigma)
        r1 = poly_expand(fb, p.poly_n, p.poly_sigma)
        taper = _border_weights(lh, lw)
        m = _update_matrices(r0, r1, flow, taper)
        for it in range(p.iterations):
            m_blur = ndimage.uniform_filter(m, size=(p.window, p.window, 1), mode="nearest")
            flow = _solve_flow(m_blur)
            if it < p.iterations - 1:
                m = _update_matrices(r0, r1, flow, taper)
    return flow


def flow_sequence(frames: list[np.ndarray],
                  params: FlowParams | None = None) -> list[np.ndarray]:
    """Flows between consecutive frames; result i maps frame i to i+1."""
    if len(frames) < 2:
        raise ArgumentError("need at least two frames")
    return [farneback_flow(frames[i], frames[i + 1], params)
            for i in range(len(frames) - 1)]
