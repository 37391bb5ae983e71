"""Disk formats for rendered maps.

Depth goes to PFM (float32, bottom-up rows, little-endian scale -1.0) with
background +inf stored as 0.0, since PFM has no inf convention that other
readers agree on. Masks go to binary PGM. Everything visual goes to PNG.
"""

from __future__ import annotations

import numpy as np
import numpy.typing as npt
from PIL import Image

_F = npt.NDArray[np.float64]


def write_pfm(path, img) -> None:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PFM writer takes a single-channel image")
    data = img.astype(np.float32)
    data = np.where(np.isposinf(data), np.float32(0.0), data)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.flipud(data).tobytes())


def read_pfm(path) -> _F:
    """Read a grayscale PFM; zero pixels come back as +inf background."""
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise ValueError("not a grayscale PFM file")
        dims = f.readline().split()
        if len(dims) != 2:
            raise ValueError("malformed PFM dimension line")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline())
        raw = f.read(w * h * 4)
    if len(raw) != w * h * 4:
        raise ValueError("PFM payload truncated")
    dt = "<f4" if scale < 0 else ">f4"
    img = np.flipud(np.frombuffer(raw, dtype=dt).reshape(h, w)).astype(np.float64)
    return np.where(img == 0.0, np.inf, img)


def write_pgm(path, img) -> None:
    """8-bit binary PGM; boolean input maps to {0, 255}."""
    img = np.asarray(img)
    if img.dtype == bool:
        data = np.where(img, 255, 0).astype(np.uint8)
    else:
        data = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
        data = np.round(data * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(data.tobytes())


def read_pgm(path) -> npt.NDArray[np.uint8]:
    with open(path, "rb") as f:
        if f.readline().strip() != b"P5":
            raise ValueError("not a binary PGM file")
        line = f.readline()
        while line.startswith(b"#"):
            line = f.readline()
        dims = line.split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(f.readline())
        if maxval != 255:
            raise ValueError(f"only maxval 255 supported, got {maxval}")
        raw = f.read(w * h)
    if len(raw) != w * h:
        raise ValueError("PGM payload truncated")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w).copy()


def write_png(path, img) -> None:
    """Visual dump: [H,W] gray or [H,W,3] color, values clipped to [0,1]."""
    img = np.asarray(img, dtype=np.float64)
    data = np.clip(img, 0.0, 1.0)
    data = np.round(data * 255.0).astype(np.uint8)
    mode = "L" if data.ndim == 2 else "RGB"
    Image.fromarray(data, mode=mode).save(path)


def normal_to_png(path, normals) -> None:
    """Unit normals to the usual (n+1)/2 color coding; zeros stay black."""
    n = np.asarray(normals, dtype=np.float64)
    img = np.where(np.any(n != 0.0, axis=2, keepdims=True), (n + 1.0) * 0.5, 0.0)
    write_png(path, img)


def depth_to_png(path, depth) -> None:
    """Normalized visual depth: near bright, background black."""
    z = np.asarray(depth, dtype=np.float64)
    fg = np.isfinite(z)
    img = np.zeros_like(z)
    if fg.any():
        lo, hi = z[fg].min(), z[fg].max()
        span = hi - lo if hi > lo else 1.0
        img[fg] = 1.0 - 0.8 * (z[fg] - lo) / span
    write_png(path, img)
