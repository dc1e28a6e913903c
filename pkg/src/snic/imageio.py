"""Binary PPM/PGM reading and writing, and [0,1] <-> 8-bit conversion."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

IMAGE_SUFFIXES = (".ppm", ".pgm", ".pnm")


def _tokens(blob: bytes, count: int) -> tuple[list[bytes], int]:
    out, pos = [], 0
    while len(out) < count:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PNM header")
        out.append(blob[start:pos])
    return out, pos + 1  # exactly one whitespace byte ends the header


def read_pnm(path) -> np.ndarray:
    """Read a binary P6/P5 file as ``uint8 [H, W, 3]`` (grey is replicated)."""
    blob = Path(path).read_bytes()
    (magic, w, h, maxval), start = _tokens(blob, 4)
    if magic not in (b"P6", b"P5"):
        raise ValueError(f"{path}: unsupported PNM type {magic!r} (need binary P6 or P5)")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PNM files are supported (maxval {maxval})")
    c = 3 if magic == b"P6" else 1
    n = w * h * c
    data = np.frombuffer(blob, dtype=np.uint8, count=n, offset=start)
    if data.size != n:
        raise ValueError(f"{path}: truncated pixel data")
    img = data.reshape(h, w, c)
    return np.repeat(img, 3, axis=2) if c == 1 else img.copy()


def write_ppm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("write_ppm expects uint8 [H, W, 3]")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(image).tobytes())


def to_unit(image: np.ndarray, dtype=np.float32) -> np.ndarray:
    """``uint8 [H,W,3]`` -> ``[1,3,H,W]`` in [0,1] (v / 255)."""
    return np.ascontiguousarray((image.astype(np.float64) / 255.0).transpose(2, 0, 1)[None], dtype=dtype)


def to_uint8(x) -> np.ndarray:
    """``[1,3,H,W]`` or ``[3,H,W]`` in [0,1] -> ``uint8 [H,W,3]``, round half away from zero."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 4:
        x = x[0]
    v = np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5)
    return v.astype(np.uint8).transpose(1, 2, 0)


def quantize_pixels(x: np.ndarray) -> np.ndarray:
    """Round a [0,1] image onto the 8-bit grid, keeping the float layout."""
    v = np.floor(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5)
    return (v / 255.0).astype(np.asarray(x).dtype)


def load_image(path, dtype=np.float32) -> np.ndarray:
    return to_unit(read_pnm(path), dtype)


def save_image(path, x) -> None:
    write_ppm(path, to_uint8(x))


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"image directory {directory} does not exist")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def image_id(path) -> str:
    return os.path.splitext(os.path.basename(str(path)))[0]
