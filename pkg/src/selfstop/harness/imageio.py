"""8-bit raster IO (PNG, PPM, PGM) through Pillow."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import SelfStopError

SUFFIXES = {".png": "PNG", ".ppm": "PPM", ".pgm": "PPM", ".pnm": "PPM"}


class ImageFormatError(SelfStopError, ValueError):
    """Unreadable, corrupt or unsupported raster file."""


def load_image(path) -> np.ndarray:
    """Read an 8-bit grayscale or RGB file as float64 ``(H, W, C)`` in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "P":
                im = im.convert("RGB")
                mode = "RGB"
            if mode not in ("L", "RGB"):
                raise ImageFormatError(f"{path}: unsupported pixel mode {mode} (need 8-bit L or RGB)")
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float64) / 255.0


def to_uint8(x) -> np.ndarray:
    return np.round(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(x, path) -> None:
    """Write ``(H, W)``, ``(H, W, 1)`` or ``(H, W, 3)`` data in [0, 1]."""
    path = Path(path)
    fmt = SUFFIXES.get(path.suffix.lower())
    if fmt is None:
        raise ImageFormatError(f"{path}: unsupported extension (use {', '.join(SUFFIXES)})")
    a = to_uint8(x)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if not (a.ndim == 2 or (a.ndim == 3 and a.shape[2] == 3)):
        raise ImageFormatError(f"cannot store an array of shape {a.shape} as an image")
    if path.suffix.lower() == ".pgm" and a.ndim == 3:
        raise ImageFormatError(f"{path}: PGM holds grayscale only")
    Image.fromarray(a).save(path, format=fmt)
