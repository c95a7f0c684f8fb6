"""Binary PGM (P5) and PPM (P6) image I/O.

Gray frames are uint8 arrays [H, W]; color frames uint8 [H, W, 3].
Writers produce byte-identical output for identical arrays.
"""
from __future__ import annotations

import numpy as np

from .errors import ArgumentError


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ArgumentError("PGM expects a uint8 [H, W] array")
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        f.write(img.tobytes())


def write_ppm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ArgumentError("PPM expects a uint8 [H, W, 3] array")
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        f.write(img.tobytes())


def _read_header(f):
    # magic, width, height, maxval; single whitespace after maxval per spec
    tokens = []
    while len(tokens) < 4:
        line = f.readline()
        if not line:
            raise ArgumentError("truncated netpbm header")
        line = line.split(b"#", 1)[0]
        tokens.extend(line.split())
    return tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, w, h, maxval = _read_header(f)
        if magic != b"P5" or maxval != 255:
            raise ArgumentError(f"unsupported PGM variant: {magic!r} maxval={maxval}")
        data = f.read(w * h)
    if len(data) != w * h:
        raise ArgumentError("truncated PGM payload")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, w, h, maxval = _read_header(f)
        if magic != b"P6" or maxval != 255:
            raise ArgumentError(f"unsupported PPM variant: {magic!r} maxval={maxval}")
        data = f.read(w * h * 3)
    if len(data) != w * h * 3:
        raise ArgumentError("truncated PPM payload")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)
