"""PPM (P6) reading/writing and grid tiling.

P6 keeps goldens bit-exact with no compression dependency. Header is exactly
``P6\\n<w> <h>\\n255\\n`` followed by raw RGB bytes. Model-space images live in
[-1, 1] and map to bytes via round((v + 1) * 127.5) clamped to [0, 255].
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import IoError


def float_to_u8(img: np.ndarray) -> np.ndarray:
    """(3, H, W) in [-1, 1] -> (H, W, 3) uint8."""
    v = np.rint((np.asarray(img, dtype=np.float64) + 1.0) * 127.5)
    return np.clip(v, 0, 255).astype(np.uint8).transpose(1, 2, 0)


def u8_to_float(img: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 -> (3, H, W) in [-1, 1]."""
    return (img.astype(np.float64) / 127.5 - 1.0).transpose(2, 0, 1)


def write_ppm(path, img: np.ndarray) -> None:
    """img: (H, W, 3) uint8."""
    img = np.ascontiguousarray(img, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise IoError(f"write_ppm expects (H, W, 3), got {img.shape}")
    h, w, _ = img.shape
    try:
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(img.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_ppm(path) -> np.ndarray:
    """Returns (H, W, 3) uint8."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if not blob.startswith(b"P6"):
        raise IoError(f"{path}: not a P6 PPM file")
    # header: three whitespace-delimited fields after P6 (comments not emitted by us)
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise IoError(f"{path}: unsupported maxval {maxval}")
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=pos)
    return data.reshape(h, w, 3).copy()


def tile_grid(images: list[np.ndarray], cols: int, gutter: int = 2) -> np.ndarray:
    """Tile (H, W, 3) uint8 images row-major with a black gutter."""
    if not images:
        raise IoError("tile_grid: no images")
    h, w, _ = images[0].shape
    rows = (len(images) + cols - 1) // cols
    grid = np.zeros((rows * h + (rows - 1) * gutter, cols * w + (cols - 1) * gutter, 3),
                    dtype=np.uint8)
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        y, x = r * (h + gutter), c * (w + gutter)
        grid[y : y + h, x : x + w] = img
    return grid
