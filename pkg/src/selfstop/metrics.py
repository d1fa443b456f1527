"""Reference metrics, detection gaps and residual diagnostics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .degradation import adjoint_fft2, fft2
from .errors import ConfigError, ShapeError

PSNR_CAP = 100.0
LUMA = np.array([0.299, 0.587, 0.114])
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def _pair(x, ref, op):
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ShapeError(op, "images differ in shape", x.shape, ref.shape)
    return x, ref


def psnr(x, ref) -> float:
    """Peak signal-to-noise ratio in dB for unit peak, all channels pooled."""
    x, ref = _pair(x, ref, "psnr")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def to_luma(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3 and x.shape[2] == 3:
        return x @ LUMA
    if x.ndim == 3 and x.shape[2] == 1:
        return x[:, :, 0]
    if x.ndim == 2:
        return x
    raise ShapeError("luma", "expected H x W, H x W x 1 or H x W x 3", x.shape)


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise ConfigError(f"filter size must be a positive odd integer, got {size}")
    if not sigma > 0:
        raise ConfigError(f"filter sigma must be positive, got {sigma}")
    r = np.arange(size) - size // 2
    k = np.exp(-(r**2) / (2.0 * sigma**2))
    return k / k.sum()


def _filter_valid(img, k):
    # separable correlation keeping only fully-covered positions
    n = k.size
    v = np.lib.stride_tricks.sliding_window_view(img, n, axis=0) @ k
    return np.lib.stride_tricks.sliding_window_view(v, n, axis=1) @ k


def ssim(x, ref) -> float:
    """Mean structural similarity of the luma channels (unit data range)."""
    x, ref = _pair(x, ref, "ssim")
    a, b = to_luma(x), to_luma(ref)
    if min(a.shape) < SSIM_WINDOW:
        raise ShapeError("ssim", f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window", a.shape)
    k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    mu_a, mu_b = _filter_valid(a, k), _filter_valid(b, k)
    saa = _filter_valid(a * a, k) - mu_a**2
    sbb = _filter_valid(b * b, k) - mu_b**2
    sab = _filter_valid(a * b, k) - mu_a * mu_b
    c1, c2 = K1**2, K2**2
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return float(np.clip(np.mean(num / den), -1.0, 1.0))


# ---------------------------------------------------------------- gaps


@dataclass(frozen=True)
class GapReport:
    es_pg: float
    es_sg: float
    baseline_pg: float
    baseline_sg: float
    peak_psnr: float
    peak_ssim: float
    detected_psnr: float
    detected_ssim: float
    final_psnr: float
    final_ssim: float
    peak_index: int
    detected_index: int

    def to_dict(self) -> dict:
        return asdict(self)


def compute_gaps(trace, detected_index: int) -> GapReport:
    """Gaps between the detected iterate, the trace peak and the last iterate.

    ``trace`` is a ``RunTrace`` (or anything with ``iters`` and ``column``).
    Peaks are taken per metric; ``peak_index`` is the PSNR argmax (earliest
    on ties).
    """
    if not trace.has_metrics():
        raise ConfigError("trace has no ground-truth PSNR/SSIM columns")
    iters = trace.iters
    p, s = trace.column("psnr"), trace.column("ssim")
    hits = np.flatnonzero(iters == detected_index)
    if hits.size == 0:
        raise ConfigError(f"detected index {detected_index} is not in the trace")
    j = int(hits[0])
    ip = int(np.argmax(p))
    peak_psnr, peak_ssim = float(p[ip]), float(s.max())
    det_psnr, det_ssim = float(p[j]), float(s[j])
    fin_psnr, fin_ssim = float(p[-1]), float(s[-1])
    return GapReport(
        es_pg=abs(peak_psnr - det_psnr),
        es_sg=abs(peak_ssim - det_ssim),
        baseline_pg=peak_psnr - fin_psnr,
        baseline_sg=peak_ssim - fin_ssim,
        peak_psnr=peak_psnr,
        peak_ssim=peak_ssim,
        detected_psnr=det_psnr,
        detected_ssim=det_ssim,
        final_psnr=fin_psnr,
        final_ssim=fin_ssim,
        peak_index=int(iters[ip]),
        detected_index=int(detected_index),
    )


# ---------------------------------------------------------------- diagnostics


def _single_channel(r, op):
    r = np.asarray(r, dtype=np.float64)
    if r.ndim == 3 and r.shape[2] == 1:
        r = r[:, :, 0]
    if r.ndim != 2:
        raise ShapeError(op, "expected a single-channel residual", r.shape)
    return r


def whiteness_statistic(residual) -> tuple[np.ndarray, float]:
    """Circular autocorrelation ``(W * W)[s] = sum_i W[i] W[i + s]``.

    Returns the map (zero shift at ``[0, 0]``) and the Frobenius norm of the
    map with that entry removed.
    """
    w = _single_channel(residual, "whiteness_statistic")
    k = fft2(w)
    corr = np.real(adjoint_fft2(np.abs(k) ** 2)) * math.sqrt(w.size)
    off = corr.copy()
    off[0, 0] = 0.0
    return corr, float(np.linalg.norm(off))


def local_discrepancy(residual, gaussian_size: int = 11, sigma_g: float = 1.5) -> np.ndarray:
    """Gaussian-weighted local mean of the squared residual (reflect borders)."""
    r = _single_channel(residual, "local_discrepancy")
    k = gaussian_kernel(gaussian_size, sigma_g)
    pad = gaussian_size // 2
    if pad >= min(r.shape):
        raise ShapeError("local_discrepancy", "filter wider than the residual", r.shape)
    sq = np.pad(r * r, pad, mode="reflect")
    return _filter_valid(sq, k)


def log_spectrum(x, normalize: bool = True) -> np.ndarray:
    """``log(1 + |DFT|)`` of the luma, DC centred, optionally scaled to [0, 1]."""
    g = to_luma(x)
    mag = np.abs(fft2(g)) * math.sqrt(g.size)  # unnormalised DFT magnitudes
    spec = np.fft.fftshift(np.log1p(mag))
    if normalize:
        lo, hi = spec.min(), spec.max()
        spec = (spec - lo) / (hi - lo) if hi > lo else np.zeros_like(spec)
    return spec
