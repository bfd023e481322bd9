"""Minimal binary PPM (P6) / PGM (P5) codec and planar float32 reader."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    """Write an ``[H, W, 3]`` uint8 array as P6."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ImageFormatError(f"write_ppm expects [H, W, 3] uint8, got {rgb.shape} {rgb.dtype}")
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb).tobytes())


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out, i = [], 0
    while len(out) < count:
        while i < len(buf) and buf[i : i + 1].isspace():
            i += 1
        if buf[i : i + 1] == b"#":
            while i < len(buf) and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < len(buf) and not buf[i : i + 1].isspace():
            i += 1
        if start == i:
            raise ImageFormatError("truncated PNM header")
        out.append(buf[start:i])
    return out, i + 1  # exactly one whitespace byte ends the header


def read_pnm(path: str | Path) -> np.ndarray:
    """Read P6 (``[H, W, 3]``) or P5 (``[H, W, 1]``) 8-bit images as uint8."""
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _tokens(buf, 4)
    if magic not in (b"P6", b"P5"):
        raise ImageFormatError(f"{path}: unsupported magic {magic!r}")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ImageFormatError(f"{path}: only 8-bit images supported (maxval {maxval})")
    c = 3 if magic == b"P6" else 1
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h * c, offset=offset)
    return data.reshape(h, w, c).copy()


def read_planar_f32(path: str | Path, side: int, channels: int) -> np.ndarray:
    """Planar little-endian float32 ``[C, W, W]`` file, returned as ``[W, W, C]``."""
    data = np.fromfile(path, dtype="<f4")
    if data.size != channels * side * side:
        raise ImageFormatError(f"{path}: {data.size} floats, expected {channels}x{side}x{side}")
    return data.reshape(channels, side, side).transpose(1, 2, 0).astype(np.float64)


def load_image(path: str | Path, side: int, channels: int) -> np.ndarray:
    """Image as ``[W, W, C]`` float64 in the 0..255 intensity scale."""
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pgm", ".pnm"):
        img = read_pnm(path).astype(np.float64)
        if img.shape[2] != channels:
            img = img.mean(axis=2, keepdims=True) if channels == 1 else np.repeat(img, channels, axis=2)
    else:
        img = read_planar_f32(path, side, channels)
    if img.shape[:2] != (side, side):
        raise ImageFormatError(f"{path}: image is {img.shape[1]}x{img.shape[0]}, model expects {side}x{side}")
    return img


def save_image(path: str | Path, image: np.ndarray) -> None:
    """Save a 0..255 ``[W, W, C]`` image as PPM (grey images are replicated to RGB)."""
    img = np.clip(np.rint(np.asarray(image, dtype=np.float64)), 0, 255).astype(np.uint8)
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    write_ppm(path, img)
