"""End-to-end training of codec instances on random crops."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import codec, imageio, metrics
from . import tensor as T
from .codec import CodecConfig, CodecModel

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lam: float = 0.01
    steps: int = 6000
    batch: int = 8
    crop: int = 64
    lr: float = 1e-3
    lr_decay_step: int = 0       # 0 disables; from this step on the rate is lr_final
    lr_final: float = 1e-4
    init: str = ""               # warm start from this model file
    seed: int = 0
    dataset: str = ""
    log_every: int = 100
    channels: tuple[int, ...] = (32, 32, 32)
    latent_channels: int = 32
    kernel_size: int = 5
    activation: str = "gdn"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.steps < 0 or self.batch < 1:
            raise ValueError("steps must be >= 0 and batch >= 1")
        d = self.codec_config().downsample_factor
        if self.crop % d:
            raise ValueError(f"crop {self.crop} must be divisible by the downsample factor {d}")

    def codec_config(self) -> CodecConfig:
        return CodecConfig(tuple(self.channels), self.latent_channels, self.kernel_size, self.activation)


_ALIASES = {"lambda": "lam", "learning_rate": "lr", "data": "dataset"}


def parse_config_text(text: str) -> TrainConfig:
    """Parse ``key=value`` lines (``#`` comments allowed) into a TrainConfig."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in types:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        kind = types[key]
        if key == "channels":
            values[key] = tuple(int(v) for v in val.replace(",", " ").split())
        elif "int" in str(kind):
            values[key] = int(val)
        elif "float" in str(kind):
            values[key] = float(val)
        else:
            values[key] = val
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    return parse_config_text(Path(path).read_text())


class PatchSampler:
    """Uniformly random crops from a fixed list of images."""

    def __init__(self, images: list[np.ndarray], crop: int, rng: np.random.Generator):
        self.images = [im for im in images if im.shape[0] >= crop and im.shape[1] >= crop]
        if not self.images:
            raise ValueError(f"no image in the corpus is at least {crop}x{crop}")
        self.crop = crop
        self.rng = rng

    @classmethod
    def from_directory(cls, directory, crop: int, seed: int = 0) -> "PatchSampler":
        paths = imageio.list_images(directory)
        if not paths:
            raise ValueError(f"no PPM/PGM images found in {directory}")
        images = [imageio.read_pnm(p) for p in paths]
        return cls(images, crop, np.random.default_rng(seed))

    def sample(self, batch: int, dtype=np.float32) -> np.ndarray:
        out = np.empty((batch, 3, self.crop, self.crop), dtype=dtype)
        for i in range(batch):
            img = self.images[self.rng.integers(len(self.images))]
            y = self.rng.integers(img.shape[0] - self.crop + 1)
            x = self.rng.integers(img.shape[1] - self.crop + 1)
            patch = img[y:y + self.crop, x:x + self.crop]
            if self.rng.random() < 0.5:
                patch = patch[:, ::-1]
            out[i] = imageio.to_unit(patch, dtype)[0]
        return out


def training_loss(model: CodecModel, batch, lam: float, rng=None):
    """``lam * MSE_255(x_tilde, x) + bpp`` averaged over the batch.

    Returns ``(loss, bpp, mse_255)`` tensors.
    """
    x = T.as_tensor(batch, dtype=model.dtype)
    n, _, h, w = x.shape
    x_tilde, bits = codec.surrogate_pass(model, x, rng)
    bpp = bits * (1.0 / (n * h * w))
    dist = metrics.distortion(x_tilde, x, metrics.MetricKind.MSE)
    return dist * lam + bpp, bpp, dist


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place."""
        adam_step(params, grads, self, self.lr)


def adam_step(params, grads, state: Adam, lr: float) -> None:
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


@dataclass
class TrainResult:
    model: CodecModel
    curve: list[dict] = field(default_factory=list)
    initial_val_loss: float = math.nan
    final_val_loss: float = math.nan


def validation_loss(model: CodecModel, batch: np.ndarray, lam: float, seed: int = 1234) -> float:
    with T.no_grad():
        loss, _, _ = training_loss(model, batch, lam, np.random.default_rng(seed))
    return float(loss.data)


def train(config: TrainConfig, val_images: np.ndarray | None = None, callback=None) -> TrainResult:
    """Train one codec instance; deterministic given ``config.seed``."""
    sampler = PatchSampler.from_directory(config.dataset, config.crop, seed=config.seed + 1)
    if config.init:
        model = codec.load_model(config.init)
        if model.config != config.codec_config():
            raise ValueError(f"{config.init}: architecture {model.config} does not match the config")
    else:
        model = CodecModel.initialize(config.codec_config(), seed=config.seed)
    if val_images is None:
        val_images = PatchSampler.from_directory(config.dataset, config.crop, seed=10_000 + config.seed).sample(16)
    noise_rng = np.random.default_rng(config.seed + 2)
    opt = Adam(config.lr)
    result = TrainResult(model, initial_val_loss=validation_loss(model, val_images, config.lam))
    model.requires_grad_(True)
    t0 = time.perf_counter()
    avg = None
    for step in range(config.steps):
        batch = sampler.sample(config.batch)
        loss, bpp, dist = training_loss(model, batch, config.lam, noise_rng)
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingDiverged(f"loss became {value} at step {step}")
        loss.backward()
        grads = {n: p.grad for n, p in model.params.items()}
        if config.lr_decay_step and step == config.lr_decay_step:
            opt.lr = config.lr_final
        opt.step({n: p.data for n, p in model.params.items()}, grads)
        model.project_()
        for p in model.params.values():
            p.grad = None
        avg = value if avg is None else 0.98 * avg + 0.02 * value
        if step % config.log_every == 0 or step == config.steps - 1:
            row = {"step": step, "loss": value, "loss_avg": avg, "bpp": float(bpp.data),
                   "mse255": float(dist.data)}
            result.curve.append(row)
            log.info("step %d loss %.4f (avg %.4f) bpp %.4f mse %.2f (%.0fs)", step, value, avg,
                     row["bpp"], row["mse255"], time.perf_counter() - t0)
            if callback is not None:
                callback(row)
    model.requires_grad_(False)
    result.final_val_loss = validation_loss(model, val_images, config.lam)
    return result
