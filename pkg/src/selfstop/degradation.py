"""Measurement models: noise synthesis, masks and the subsampled Fourier operator."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .rng import stream

NOISE_KINDS = ("gaussian", "impulse", "shot", "speckle", "none")
LEVELS = ("low", "medium", "high")
NOISE_LEVELS = {
    "gaussian": (0.12, 0.18, 0.26),
    "impulse": (0.3, 0.5, 0.7),
    "shot": (25.0, 12.0, 5.0),
    "speckle": (0.20, 0.35, 0.45),
}


@dataclass(frozen=True)
class NoiseSpec:
    """Noise family plus either a named level or an explicit parameter.

    For gaussian and speckle the tabulated values are read as standard
    deviations unless ``scale="variance"``, in which case sigma is their
    square root. ``param`` always bypasses the table and is interpreted the
    same way.
    """

    kind: str = "gaussian"
    level: str | None = "medium"
    param: float | None = None
    scale: str = "std"
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if self.kind == "none":
            return
        if self.param is None and self.level not in LEVELS:
            raise ConfigError(f"noise level must be one of {LEVELS} or an explicit param, got {self.level!r}")
        if self.scale not in ("std", "variance"):
            raise ConfigError(f"scale must be 'std' or 'variance', got {self.scale!r}")
        v = self.raw_value()
        if self.kind == "impulse" and not 0 <= v <= 1:
            raise ConfigError(f"impulse probability must lie in [0, 1], got {v}")
        if self.kind == "shot" and not v > 0:
            raise ConfigError(f"shot-noise rate must be positive, got {v}")
        if self.kind in ("gaussian", "speckle") and v < 0:
            raise ConfigError(f"{self.kind} noise level must be non-negative, got {v}")

    def raw_value(self) -> float:
        if self.param is not None:
            return float(self.param)
        return NOISE_LEVELS[self.kind][LEVELS.index(self.level)]

    def parameter(self) -> float:
        """sigma for gaussian/speckle, p for impulse, lambda for shot."""
        self.validate()
        if self.kind == "none":
            return 0.0
        v = self.raw_value()
        if self.kind in ("gaussian", "speckle") and self.scale == "variance":
            return math.sqrt(v)
        return v


def apply_noise(x: np.ndarray, spec: NoiseSpec, rng: np.random.Generator | None = None, clip: bool = True):
    """Draw a noisy copy of ``x`` (values in [0, 1]).

    Impulse noise acts on every array element independently, so colour
    channels are corrupted separately.
    """
    spec.validate()
    x = np.asarray(x, dtype=np.float64)
    if spec.kind == "none":
        return x.copy()
    if rng is None:
        rng = stream(spec.seed, "noise")
    v = spec.parameter()
    if spec.kind == "gaussian":
        y = x + rng.normal(0.0, v, size=x.shape)
    elif spec.kind == "speckle":
        y = x * (1.0 + rng.normal(0.0, v, size=x.shape))
    elif spec.kind == "shot":
        y = rng.poisson(v * x) / v
    else:
        hit = rng.random(x.shape) < v
        salt = rng.random(x.shape) < 0.5
        y = np.where(hit, salt.astype(np.float64), x)
    return np.clip(y, 0.0, 1.0) if clip else y


def make_inpainting_mask(height: int, width: int, rate: float, seed: int = 0) -> np.ndarray:
    """iid Bernoulli(rate) mask of observed pixels, 1 = observed."""
    if not 0 < rate <= 1:
        raise ConfigError(f"observation rate must lie in (0, 1], got {rate}")
    if height < 1 or width < 1:
        raise ConfigError(f"mask dims must be >= 1, got {height}x{width}")
    return (stream(seed, "mask").random((height, width)) < rate).astype(np.uint8)


# ---------------------------------------------------------------- Fourier


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def _fft_axis(a: np.ndarray, axis: int, inverse: bool) -> np.ndarray:
    # iterative radix-2 Cooley-Tukey, vectorised over every other axis
    a = np.moveaxis(np.asarray(a, dtype=np.complex128), axis, -1)
    n = a.shape[-1]
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    out = a[..., rev].copy()
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        v = out.reshape(*out.shape[:-1], n // size, size)
        even = v[..., :half].copy()
        odd = v[..., half:] * tw
        v[..., :half] = even + odd
        v[..., half:] = even - odd
        size *= 2
    out /= math.sqrt(n)
    return np.moveaxis(out, -1, axis)


def _check_fft_shape(x):
    if x.ndim < 2:
        raise ShapeError("fft2", "need at least two dimensions", x.shape)
    h, w = x.shape[:2]
    if not (_is_pow2(h) and _is_pow2(w)):
        raise ShapeError("fft2", "radix-2 transform needs power-of-two H and W", x.shape)


def fft2(x) -> np.ndarray:
    """Orthonormal 2-D DFT over the first two axes (trailing axes batch)."""
    x = np.asarray(x)
    _check_fft_shape(x)
    return _fft_axis(_fft_axis(x, 0, False), 1, False)


def adjoint_fft2(k) -> np.ndarray:
    """Adjoint (= inverse, by orthonormality) of :func:`fft2`."""
    k = np.asarray(k)
    _check_fft_shape(k)
    return _fft_axis(_fft_axis(k, 0, True), 1, True)


def frequency_radius(height: int, width: int) -> np.ndarray:
    """Distance of each unshifted DFT bin from DC, in normalised units."""
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    return np.sqrt(fy**2 + fx**2)


def mri_budget(height: int, width: int, acceleration: int = 8) -> int:
    return math.ceil(height * width / acceleration)


def make_mri_mask(height: int, width: int, acceleration: int = 8, seed: int = 0) -> np.ndarray:
    """Variable-density sampling pattern in unshifted DFT layout.

    Keeps exactly ``ceil(H*W/acceleration)`` bins, DC always among them; the
    other bins are drawn without replacement with weight ``1/(1 + r)`` where
    ``r`` is the radius in bin units.
    """
    if acceleration < 1:
        raise ConfigError(f"acceleration must be >= 1, got {acceleration}")
    budget = mri_budget(height, width, acceleration)
    r = frequency_radius(height, width) * max(height, width)
    weights = (1.0 / (1.0 + r)).ravel()
    weights[0] = 0.0
    rng = stream(seed, "mri_mask")
    picked = rng.choice(height * width, size=budget - 1, replace=False, p=weights / weights.sum())
    mask = np.zeros(height * width, dtype=np.uint8)
    mask[0] = 1
    mask[picked] = 1
    return mask.reshape(height, width)


# ---------------------------------------------------------------- operators


@dataclass(frozen=True)
class ForwardOp:
    kind: str = "identity"
    # (H, W) binary; pixel mask for "mask", frequency mask for "subsampled_fourier"
    mask: np.ndarray | None = None

    def validate(self, shape=None) -> None:
        if self.kind not in ("identity", "mask", "subsampled_fourier"):
            raise ConfigError(f"unknown forward operator {self.kind!r}")
        if self.kind == "identity":
            return
        if self.mask is None or self.mask.ndim != 2:
            raise ConfigError(f"{self.kind} operator needs a 2-D mask")
        if not np.isin(self.mask, (0, 1)).all():
            raise ConfigError("mask entries must be 0 or 1")
        if shape is not None and tuple(shape[:2]) != self.mask.shape:
            raise ShapeError("apply_forward", "mask does not match the image", self.mask.shape, shape)

    def mask_for(self, x: np.ndarray) -> np.ndarray:
        m = self.mask.astype(np.float64)
        return m.reshape(m.shape + (1,) * (x.ndim - 2))


def apply_forward(op: ForwardOp, x) -> np.ndarray:
    x = np.asarray(x)
    op.validate(x.shape)
    if op.kind == "identity":
        return x.copy()
    m = op.mask_for(x)
    if op.kind == "mask":
        return x * m
    return m * fft2(x)


def adjoint_forward(op: ForwardOp, y) -> np.ndarray:
    """Adjoint of :func:`apply_forward` (real part for the Fourier kind)."""
    y = np.asarray(y)
    op.validate(y.shape)
    if op.kind == "identity":
        return y.copy()
    m = op.mask_for(y)
    if op.kind == "mask":
        return y * m
    return adjoint_fft2(m * y)


def mri_noise(shape, sigma: float = 0.01, seed: int = 0) -> np.ndarray:
    """Complex Gaussian with iid real and imaginary parts of std ``sigma``."""
    if sigma < 0:
        raise ConfigError(f"sigma must be non-negative, got {sigma}")
    rng = stream(seed, "mri_noise")
    return rng.normal(0.0, sigma, size=shape) + 1j * rng.normal(0.0, sigma, size=shape)
