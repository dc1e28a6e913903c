"""Substitute search: find an input that a frozen codec compresses better.

The search runs projected descent on the surrogate objective, with the
distortion always measured against the original image ``x0``:

* :class:`TradeOff`          ``lambda_s * D(T_e(x), x0) + R_e(x)``
* :class:`RateTarget`        ``D(T_e(x), x0) + kappa * max(R_e(x) - R_t, tau)``
* :class:`DistortionTarget`  ``R_e(x) + kappa * max(D(T_e(x), x0) - D_t, tau)``

``R_e`` is in bits per pixel of the unpadded image.  The optimization
variable is either the pixels (clamped to [0,1] after every step) or the
pre-quantization latent.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import codec, imageio, metrics
from . import tensor as T
from .codec import CodecModel
from .metrics import MetricKind
from .tensor import Tensor

DEFAULT_KAPPA = 2.0 ** 10
PIXEL_STEP = {MetricKind.PSNR: 1e-3, MetricKind.MSE: 1e-3, MetricKind.MS_SSIM: 5e-4}
LATENT_STEP = 2e-2


class SnicDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TradeOff:
    lambda_s: float
    metric: MetricKind = MetricKind.PSNR

    def __post_init__(self):
        object.__setattr__(self, "metric", MetricKind.parse(self.metric))
        if self.lambda_s < 0:
            raise ValueError("lambda_s must be non-negative")


@dataclass(frozen=True)
class RateTarget:
    rate: float
    kappa: float = DEFAULT_KAPPA
    tau: float = 0.0
    metric: MetricKind = MetricKind.PSNR

    def __post_init__(self):
        object.__setattr__(self, "metric", MetricKind.parse(self.metric))
        if self.rate < 0 or self.kappa <= 0:
            raise ValueError("rate target needs rate >= 0 and kappa > 0")


@dataclass(frozen=True)
class DistortionTarget:
    """``level`` is in metric units: dB for PSNR, a score for MS-SSIM, MSE on [0,1] for MSE."""

    level: float
    metric: MetricKind = MetricKind.PSNR
    kappa: float = DEFAULT_KAPPA
    tau: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "metric", MetricKind.parse(self.metric))
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")

    @property
    def distortion(self) -> float:
        return metrics.distortion_level(self.level, self.metric)


Target = Union[TradeOff, RateTarget, DistortionTarget]


@dataclass
class SnicConfig:
    steps: int = 100
    step_size: float | None = None
    variable: str = "pixel"
    noise: str = "per-step"
    keep_best: bool = False
    update: str = "normalized"
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.variable not in ("pixel", "latent"):
            raise ValueError("variable must be 'pixel' or 'latent'")
        if self.noise not in ("per-step", "fixed"):
            raise ValueError("noise must be 'per-step' or 'fixed'")
        if self.update not in ("gradient", "normalized", "sign"):
            raise ValueError("update must be 'gradient', 'normalized' or 'sign'")

    def resolved_step_size(self, metric: MetricKind) -> float:
        if self.step_size is not None:
            return self.step_size
        if self.variable == "latent":
            return LATENT_STEP
        return PIXEL_STEP[metric]


@dataclass
class SnicResult:
    substitute: np.ndarray
    substitute_image: np.ndarray
    reconstruction: np.ndarray
    bitstream: bytes
    trace: list[float]
    rate_trace: list[float]
    distortion_trace: list[float]
    best_step: int
    surrogate_bpp: float
    hard_bpp: float
    psnr: float
    ms_ssim: float
    generation_time: float
    steps: int
    variable: str = "pixel"
    latent: np.ndarray | None = field(default=None, repr=False)

    @property
    def initial_objective(self) -> float:
        return self.trace[0]

    @property
    def final_objective(self) -> float:
        return self.trace[self.best_step]


# -- objectives -----------------------------------------------------------

def _bpp(bits: Tensor, x0: np.ndarray) -> Tensor:
    return bits * (1.0 / (x0.shape[2] * x0.shape[3]))


def combine(target: Target, x_tilde: Tensor, bpp: Tensor, x0) -> tuple[Tensor, Tensor]:
    """Objective value from surrogate outputs; returns ``(objective, distortion)``."""
    dist = metrics.distortion(x_tilde, x0, target.metric)
    if isinstance(target, TradeOff):
        return dist * target.lambda_s + bpp, dist
    if isinstance(target, RateTarget):
        return dist + T.hinge(bpp - target.rate, target.tau) * target.kappa, dist
    if isinstance(target, DistortionTarget):
        return bpp + T.hinge(dist - target.distortion, target.tau) * target.kappa, dist
    raise TypeError(f"unknown target {target!r}")


def objective(model: CodecModel, x, x0, target: Target, rng=None) -> Tensor:
    x0 = np.asarray(x0, dtype=model.dtype)
    x_tilde, bits = codec.surrogate_pass(model, x, rng)
    obj, _ = combine(target, x_tilde, _bpp(bits, x0), x0)
    return obj


def objective_tradeoff(model, x, x0, lambda_s, metric=MetricKind.PSNR, rng=None) -> Tensor:
    return objective(model, x, x0, TradeOff(lambda_s, metric), rng)


def objective_rate_target(model, x, x0, rate, kappa=DEFAULT_KAPPA, tau=0.0,
                          metric=MetricKind.PSNR, rng=None) -> Tensor:
    return objective(model, x, x0, RateTarget(rate, kappa, tau, metric), rng)


def objective_distortion_target(model, x, x0, level, kappa=DEFAULT_KAPPA, tau=0.0,
                                metric=MetricKind.PSNR, rng=None) -> Tensor:
    return objective(model, x, x0, DistortionTarget(level, metric, kappa, tau), rng)


# -- search ---------------------------------------------------------------

def _descent(value: np.ndarray, grad: np.ndarray, step: float, rule: str) -> np.ndarray:
    if rule == "gradient":
        delta = grad
    elif rule == "sign":
        delta = np.sign(grad)
    else:
        rms = float(np.sqrt(np.mean(np.square(grad, dtype=np.float64))))
        delta = grad / rms if rms > 0 else grad
    return value - (step * delta).astype(value.dtype)


def _noise_source(config: SnicConfig):
    if config.noise == "fixed":
        return lambda: np.random.default_rng(config.seed)
    rng = np.random.default_rng(config.seed)
    return lambda: rng


def _evaluate(model: CodecModel, x0: np.ndarray, blob: bytes, x_hat: np.ndarray):
    hard_bpp = 8.0 * (len(blob) - codec.entropy.HEADER_SIZE) / (x0.shape[2] * x0.shape[3])
    with T.no_grad():
        ssim = float(metrics.ms_ssim(x_hat.astype(np.float64), x0.astype(np.float64)).data)
    return hard_bpp, metrics.psnr(x_hat, x0), ssim


def _check_image(x0) -> np.ndarray:
    x0 = np.asarray(x0)
    if x0.ndim == 3:
        x0 = x0[None]
    if x0.ndim != 4 or x0.shape[0] != 1:
        raise ValueError(f"expected one image [1,3,H,W], got {x0.shape}")
    # reductions on strided views round differently; results must not depend on layout
    return np.ascontiguousarray(x0)


def generate_substitute(model: CodecModel, x0, target: Target, config: SnicConfig | None = None) -> SnicResult:
    """Search for a substitute of ``x0``; the model is only read, never updated."""
    config = config or SnicConfig()
    if config.variable == "latent":
        return generate_substitute_latent(model, x0, target, config)
    x0 = _check_image(x0).astype(model.dtype)
    step = config.resolved_step_size(target.metric)
    noise = _noise_source(config)
    x = x0.copy()
    trace, rates, dists = [], [], []
    best_step, best_value, best_x = 0, math.inf, x0
    t0 = time.perf_counter()
    for k in range(config.steps + 1):
        xt = Tensor(x, requires_grad=True)
        x_tilde, bits = codec.surrogate_pass(model, xt, noise())
        bpp = _bpp(bits, x0)
        obj, dist = combine(target, x_tilde, bpp, x0)
        value = float(obj.data)
        if not math.isfinite(value):
            raise SnicDiverged(f"objective is {value} at step {k}")
        trace.append(value)
        rates.append(float(bpp.data))
        dists.append(float(dist.data))
        if not config.keep_best or value < best_value:
            best_step, best_value, best_x = k, value, x
        if k == config.steps:
            break
        obj.backward()
        x = T.clamp01(_descent(x, xt.grad, step, config.update))
    gen_time = time.perf_counter() - t0

    # pixels are stored as 8-bit values; the untouched original passes through as is
    substitute = x0 if best_step == 0 else imageio.quantize_pixels(best_x)
    x_hat, blob = codec.inference_pass(model, substitute)
    hard_bpp, psnr, ssim = _evaluate(model, x0, blob, x_hat)
    return SnicResult(substitute, substitute, x_hat, blob, trace, rates, dists, best_step,
                      rates[best_step], hard_bpp, psnr, ssim, gen_time, config.steps)


def generate_substitute_latent(model: CodecModel, x0, target: Target,
                               config: SnicConfig | None = None) -> SnicResult:
    """Same search with the pre-quantization latent as the variable (no clamping)."""
    config = config or SnicConfig(variable="latent")
    x0 = _check_image(x0).astype(model.dtype)
    h, w = x0.shape[2], x0.shape[3]
    step = config.resolved_step_size(target.metric)
    noise = _noise_source(config)
    with T.no_grad():
        y0 = codec.analyze(model, codec.pad_to_multiple(x0, model.config.downsample_factor)).data
    y = y0.copy()
    trace, rates, dists = [], [], []
    best_step, best_value, best_y = 0, math.inf, y0
    t0 = time.perf_counter()
    for k in range(config.steps + 1):
        yt = Tensor(y, requires_grad=True)
        x_tilde, bits = codec.latent_surrogate_pass(model, yt, h, w, noise())
        bpp = _bpp(bits, x0)
        obj, dist = combine(target, x_tilde, bpp, x0)
        value = float(obj.data)
        if not math.isfinite(value):
            raise SnicDiverged(f"objective is {value} at step {k}")
        trace.append(value)
        rates.append(float(bpp.data))
        dists.append(float(dist.data))
        if not config.keep_best or value < best_value:
            best_step, best_value, best_y = k, value, y
        if k == config.steps:
            break
        obj.backward()
        y = _descent(y, yt.grad, step, config.update)
    gen_time = time.perf_counter() - t0

    y_hat = codec.quantize_hard(best_y).data
    blob = codec.encode_latent(model, y_hat, h, w)
    x_hat = codec.reconstruct(model, y_hat, h, w)
    hard_bpp, psnr, ssim = _evaluate(model, x0, blob, x_hat)
    return SnicResult(best_y, x_hat, x_hat, blob, trace, rates, dists, best_step,
                      rates[best_step], hard_bpp, psnr, ssim, gen_time, config.steps,
                      variable="latent", latent=y_hat)


def baseline(model: CodecModel, x0) -> SnicResult:
    """Plain compression of ``x0``, reported in the same shape as a search result."""
    x0 = _check_image(x0).astype(model.dtype)
    x_hat, blob = codec.inference_pass(model, x0)
    hard_bpp, psnr, ssim = _evaluate(model, x0, blob, x_hat)
    return SnicResult(x0, x0, x_hat, blob, [], [], [], 0, math.nan, hard_bpp, psnr, ssim, 0.0, 0)


def calibrate_tau(model: CodecModel, x0, target: RateTarget, config: SnicConfig | None = None,
                  samples: int = 1) -> RateTarget:
    """One extra round: measure the realized-minus-target offset and shift the hinge by it."""
    config = config or SnicConfig()
    offsets = []
    for i in range(samples):
        cfg = SnicConfig(**{**config.__dict__, "seed": config.seed + i})
        offsets.append(generate_substitute(model, x0, target, cfg).hard_bpp - target.rate)
    return RateTarget(target.rate, target.kappa, target.tau - float(np.mean(offsets)), target.metric)


def surrogate_rate_gap(model: CodecModel, x0, draws: int = 8, seed: int = 0) -> float:
    """Mean noisy-surrogate BPP of ``x0`` minus its real BPP.

    At low rates the noise surrogate overestimates the rate, so a hinge at
    the baseline BPP would already be active at ``x0``.  Passing this gap as
    ``tau`` puts the hinge at the real baseline rate.
    """
    x0 = _check_image(x0).astype(model.dtype)
    rng = np.random.default_rng(seed)
    with T.no_grad():
        noisy = [float(codec.surrogate_pass(model, x0, rng)[1].data) for _ in range(draws)]
    return float(np.mean(noisy)) / (x0.shape[2] * x0.shape[3]) - baseline(model, x0).hard_bpp
