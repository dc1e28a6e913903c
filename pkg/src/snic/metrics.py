"""Distortion metrics on [0,1] images in NCHW layout.

``mse`` and ``ms_ssim`` are differentiable (they return tensors and accept
tensors); ``psnr`` is a reporting function on plain arrays.
"""

from __future__ import annotations

import enum
import math

import numpy as np

from . import tensor as T
from .tensor import Tensor

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2
PSNR_DISPLAY_CAP = 100.0


class MetricKind(enum.Enum):
    MSE = "mse"
    PSNR = "psnr"
    MS_SSIM = "ms-ssim"

    @property
    def higher_is_better(self) -> bool:
        return self is not MetricKind.MSE

    @classmethod
    def parse(cls, value) -> "MetricKind":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "-")
        if key == "msssim":
            key = "ms-ssim"
        return cls(key)


def _check_pair(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


def mse(a, b) -> Tensor:
    a, b = T.as_tensor(a), T.as_tensor(b)
    _check_pair(a, b, "mse")
    d = a - b
    return T.mean(d * d)


def psnr(a, b) -> float:
    """PSNR in dB for peak 1.0; ``inf`` for identical inputs."""
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    err = float(np.mean((a - b) ** 2))
    return psnr_from_mse(err)


def psnr_from_mse(err: float) -> float:
    if err == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def display_psnr(value: float) -> float:
    return min(value, PSNR_DISPLAY_CAP)


def mean_psnr(values) -> float:
    """Average of finite PSNR values; identical pairs (inf) are left out."""
    finite = [v for v in values if math.isfinite(v)]
    return float(np.mean(finite)) if finite else math.inf


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _blur(x: Tensor, window: Tensor) -> Tensor:
    n, c, h, w = x.shape
    flat = T.reshape(x, (n * c, 1, h, w))
    k = window.shape[0]
    out = T.conv2d(flat, T.reshape(window, (1, 1, k, 1)), padding="valid")
    out = T.conv2d(out, T.reshape(window, (1, 1, 1, k)), padding="valid")
    return T.reshape(out, (n, c, out.shape[2], out.shape[3]))


def _ssim_terms(a: Tensor, b: Tensor, window: Tensor):
    mu_a, mu_b = _blur(a, window), _blur(b, window)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    var_a = _blur(a * a, window) - mu_aa
    var_b = _blur(b * b, window) - mu_bb
    cov = _blur(a * b, window) - mu_ab
    cs_map = (2.0 * cov + C2) / (var_a + var_b + C2)
    lum = (2.0 * mu_ab + C1) / (mu_aa + mu_bb + C1)
    # per-image, per-channel spatial means -> [N, C]
    return T.mean(lum * cs_map, axis=(2, 3)), T.mean(cs_map, axis=(2, 3))


def max_scales(height: int, width: int, window: int = WINDOW_SIZE) -> int:
    s = 0
    while min(height, width) >= window * 2 ** s:
        s += 1
    return s


def ms_ssim(a, b, scales: int | None = None) -> Tensor:
    """Multi-scale SSIM averaged over channels and batch.

    Uses as many of the five canonical scales as the image supports
    (``min(H, W) >= 11 * 2**(S-1)``) and renormalizes their weights.
    """
    a, b = T.as_tensor(a), T.as_tensor(b)
    _check_pair(a, b, "ms_ssim")
    if a.ndim != 4:
        raise ValueError(f"ms_ssim: expected NCHW images, got shape {a.shape}")
    available = min(len(MS_SSIM_WEIGHTS), max_scales(a.shape[2], a.shape[3]))
    if scales is None:
        scales = available
    if scales < 1 or scales > available:
        raise ValueError(
            f"ms_ssim: a {a.shape[2]}x{a.shape[3]} image supports at most {available} scales "
            f"(needs min side >= {WINDOW_SIZE} * 2**(scales-1)); request fewer scales")
    weights = np.asarray(MS_SSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    window = Tensor(gaussian_window().astype(a.dtype))
    result = None
    for i in range(scales):
        ssim_val, cs_val = _ssim_terms(a, b, window)
        last = i == scales - 1
        term = T.power(T.relu(ssim_val if last else cs_val), float(weights[i]))
        result = term if result is None else result * term
        if not last:
            a, b = T.avg_pool2(a), T.avg_pool2(b)
    return T.mean(result)


def distortion(x_tilde, x0, metric) -> Tensor:
    """Minimized distortion form used by training and substitute objectives.

    MSE/PSNR targets use MSE on the 0-255 pixel scale; MS-SSIM targets use
    ``1 - ms_ssim``.
    """
    metric = MetricKind.parse(metric)
    if metric is MetricKind.MS_SSIM:
        return 1.0 - ms_ssim(x_tilde, x0)
    return mse(x_tilde, x0) * (255.0 ** 2)


def distortion_level(value: float, metric) -> float:
    """Convert a target in metric units (dB, MS-SSIM score, MSE) to distortion form."""
    metric = MetricKind.parse(metric)
    if metric is MetricKind.PSNR:
        return 255.0 ** 2 * 10.0 ** (-value / 10.0)
    if metric is MetricKind.MS_SSIM:
        return 1.0 - value
    return 255.0 ** 2 * value
