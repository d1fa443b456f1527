"""Procedural test images, so experiments need no external data."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ..rng import stream

PHANTOMS = ("piecewise_smooth", "sinusoid_grid", "noise")


def piecewise_smooth(height: int = 128, width: int = 128, channels: int = 3, seed: int = 0) -> np.ndarray:
    """Smooth colour ramps with a handful of flat-shaded ellipses and boxes."""
    rng = stream(seed, "phantom")
    yy, xx = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width), indexing="ij")
    base = rng.uniform(0.2, 0.5, channels)
    slope = rng.uniform(-0.2, 0.2, (2, channels))
    img = base + yy[..., None] * slope[0] + xx[..., None] * slope[1]
    for _ in range(6):
        cy, cx = rng.uniform(0.15, 0.85, 2)
        ry, rx = rng.uniform(0.06, 0.25, 2)
        colour = rng.uniform(0.05, 0.95, channels)
        shade = rng.uniform(-0.15, 0.15, channels)
        if rng.random() < 0.5:
            inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
        else:
            inside = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        layer = colour + (yy - cy)[..., None] * shade
        img = np.where(inside[..., None], layer, img)
    return np.clip(img, 0, 1)


def sinusoid_grid(height: int = 128, width: int = 128, channels: int = 3, seed: int = 0, periods=(4, 8)) -> np.ndarray:
    rng = stream(seed, "phantom")
    yy, xx = np.meshgrid(np.arange(height) / height, np.arange(width) / width, indexing="ij")
    out = np.empty((height, width, channels))
    for c in range(channels):
        py, px = periods
        phase = rng.uniform(0, 2 * np.pi, 2)
        out[..., c] = 0.5 + 0.25 * np.sin(2 * np.pi * py * yy + phase[0]) + 0.2 * np.cos(2 * np.pi * px * xx + phase[1])
    return np.clip(out, 0, 1)


def noise_image(height: int = 128, width: int = 128, channels: int = 3, seed: int = 0) -> np.ndarray:
    return stream(seed, "phantom.noise").uniform(0, 1, (height, width, channels))


def make_phantom(name: str, height: int = 128, width: int = 128, channels: int = 3, seed: int = 0) -> np.ndarray:
    if name == "piecewise_smooth":
        return piecewise_smooth(height, width, channels, seed)
    if name == "sinusoid_grid":
        return sinusoid_grid(height, width, channels, seed)
    if name == "noise":
        return noise_image(height, width, channels, seed)
    raise ConfigError(f"unknown phantom {name!r}; expected one of {PHANTOMS}")
