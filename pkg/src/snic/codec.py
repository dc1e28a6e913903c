"""The compression network: analysis, quantization, prior, synthesis.

``surrogate_pass`` is the differentiable stand-in used for training and for
substitute search (uniform noise instead of rounding, likelihood bits instead
of the coder).  ``compress``/``decompress`` are the real thing and go through
the range coder.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import entropy
from . import tensor as T
from .tensor import Tensor

P_MIN = 2.0 ** -16
MODEL_MAGIC = b"SNICMDL1"


@dataclass(frozen=True)
class CodecConfig:
    channels: tuple[int, ...] = (32, 32, 32)
    latent_channels: int = 32
    kernel_size: int = 5
    activation: str = "gdn"
    image_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.activation not in ("gdn", "leaky"):
            raise ValueError(f"activation must be 'gdn' or 'leaky', got {self.activation!r}")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")

    @property
    def num_layers(self) -> int:
        return len(self.channels) + 1

    @property
    def downsample_factor(self) -> int:
        return 2 ** self.num_layers

    def to_json(self) -> bytes:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return json.dumps(d, sort_keys=True, separators=(",", ":")).encode()


class CodecModel:
    """Parameters of one codec instance.

    ``params`` maps names to tensors in a fixed order; the order defines the
    on-disk layout and the fingerprint.  Entropy scales are stored as logs.
    """

    def __init__(self, config: CodecConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: CodecConfig | None = None, seed: int = 0,
                   dtype=np.float32) -> "CodecModel":
        config = config or CodecConfig()
        rng = np.random.default_rng(seed)
        k = config.kernel_size
        widths = [config.image_channels, *config.channels, config.latent_channels]
        params: dict[str, np.ndarray] = {}
        for i in range(config.num_layers):
            cin, cout = widths[i], widths[i + 1]
            bound = math.sqrt(6.0 / ((cin + cout) * k * k))
            params[f"enc{i}.w"] = rng.uniform(-bound, bound, (cout, cin, k, k))
            params[f"enc{i}.b"] = np.zeros(cout)
            if i < config.num_layers - 1 and config.activation == "gdn":
                params[f"enc{i}.beta"] = np.ones(cout)
                params[f"enc{i}.gamma"] = 0.1 * np.eye(cout)
        rwidths = widths[::-1]
        for i in range(config.num_layers):
            cin, cout = rwidths[i], rwidths[i + 1]
            bound = math.sqrt(6.0 / ((cin + cout) * k * k))
            # transpose kernels are [C_in, C_out, k, k]
            params[f"dec{i}.w"] = rng.uniform(-bound, bound, (cin, cout, k, k))
            params[f"dec{i}.b"] = np.zeros(cout)
            if i < config.num_layers - 1 and config.activation == "gdn":
                params[f"dec{i}.beta"] = np.ones(cout)
                params[f"dec{i}.gamma"] = 0.1 * np.eye(cout)
        params["prior.mu"] = np.zeros(config.latent_channels)
        params["prior.log_scale"] = np.zeros(config.latent_channels)
        return cls(config, {n: Tensor(v.astype(dtype)) for n, v in params.items()})

    # -- parameter views ----------------------------------------------------
    @property
    def dtype(self):
        return self.params["prior.mu"].dtype

    def astype(self, dtype) -> "CodecModel":
        return CodecModel(self.config, {n: Tensor(p.data.astype(dtype)) for n, p in self.params.items()})

    def copy(self) -> "CodecModel":
        return self.astype(self.dtype)

    def requires_grad_(self, flag: bool = True) -> "CodecModel":
        for p in self.params.values():
            p.requires_grad = flag
            p.grad = None
        return self

    def entropy_params(self) -> tuple[np.ndarray, np.ndarray]:
        mu = self.params["prior.mu"].data.astype(np.float64)
        scale = np.exp(self.params["prior.log_scale"].data.astype(np.float64))
        return mu, scale

    def project_(self) -> None:
        """Keep GDN parameters inside their valid region after an update."""
        for name, p in self.params.items():
            if name.endswith(".beta"):
                np.maximum(p.data, 1e-6, out=p.data)
            elif name.endswith(".gamma"):
                np.maximum(p.data, 0.0, out=p.data)

    def param_bytes(self) -> bytes:
        return b"".join(p.data.astype("<f4").tobytes() for p in self.params.values())

    @property
    def fingerprint(self) -> bytes:
        h = hashlib.sha256()
        h.update(self.config.to_json())
        h.update(self.param_bytes())
        return h.digest()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())


# -- model files ----------------------------------------------------------

def save_model(model: CodecModel, path) -> None:
    """Write ``SNICMDL1`` | config block | float32 LE parameters | fingerprint."""
    cfg = model.config.to_json()
    body = MODEL_MAGIC + struct.pack("<I", len(cfg)) + cfg + model.param_bytes()
    with open(path, "wb") as f:
        f.write(body + model.fingerprint)


def load_model(path, dtype=np.float32) -> CodecModel:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a SNICMDL1 model file")
    (n,) = struct.unpack_from("<I", blob, 8)
    cfg_raw = blob[12:12 + n]
    d = json.loads(cfg_raw)
    config = CodecConfig(**d)
    template = CodecModel.initialize(config, dtype=np.float32)
    offset = 12 + n
    params = {}
    for name, p in template.params.items():
        count = p.size
        raw = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        params[name] = Tensor(raw.reshape(p.shape).astype(np.float32))
        offset += 4 * count
    fp = blob[offset:]
    model = CodecModel(config, params)
    if len(fp) != 32 or fp != model.fingerprint:
        raise ValueError(f"{path}: fingerprint mismatch, file is corrupt")
    return model.astype(dtype) if dtype != np.float32 else model


# -- transforms -----------------------------------------------------------

def _activation(model: CodecModel, h: Tensor, prefix: str, inverse: bool) -> Tensor:
    if model.config.activation == "gdn":
        return T.gdn(h, model.params[prefix + ".beta"], model.params[prefix + ".gamma"], inverse=inverse)
    return T.leaky_relu(h, 0.2)


def check_dims(model: CodecModel, height: int, width: int) -> None:
    d = model.config.downsample_factor
    if height % d or width % d:
        raise ValueError(
            f"image size {height}x{width} is not divisible by the downsample factor {d}; "
            f"pad it first (see pad_to_multiple)")


def analyze(model: CodecModel, x) -> Tensor:
    """Analysis transform: image ``[N,3,H,W]`` in [0,1] -> continuous latent."""
    x = T.as_tensor(x)
    check_dims(model, x.shape[2], x.shape[3])
    p = model.params
    h = x
    n = model.config.num_layers
    for i in range(n):
        h = T.conv2d(h, p[f"enc{i}.w"], p[f"enc{i}.b"], stride=2, padding="same")
        if i < n - 1:
            h = _activation(model, h, f"enc{i}", inverse=False)
    return h


def synthesize(model: CodecModel, y) -> Tensor:
    """Synthesis transform: latent ``[N,C_y,h,w]`` -> image ``[N,3,h*d,w*d]``."""
    y = T.as_tensor(y)
    if y.ndim != 4 or y.shape[1] != model.config.latent_channels:
        raise ValueError(f"latent must be [N,{model.config.latent_channels},h,w], got {y.shape}")
    p = model.params
    h = y
    n = model.config.num_layers
    for i in range(n):
        h = T.conv2d_transpose(h, p[f"dec{i}.w"], p[f"dec{i}.b"], stride=2, padding="same")
        if i < n - 1:
            h = _activation(model, h, f"dec{i}", inverse=True)
    return h


def round_half_away(a: np.ndarray) -> np.ndarray:
    return np.sign(a) * np.floor(np.abs(a) + 0.5)


def quantize_hard(y) -> Tensor:
    """Round half away from zero; not differentiable."""
    data = y.data if isinstance(y, Tensor) else np.asarray(y)
    return Tensor(round_half_away(data).astype(data.dtype))


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def uniform_noise(shape, dtype, rng) -> np.ndarray:
    u = _generator(rng).random(shape) - 0.5
    u = u.astype(dtype)
    lim = np.nextafter(np.asarray(0.5, dtype=dtype), np.asarray(0, dtype=dtype))
    return np.clip(u, -lim, lim)


def quantize_surrogate(y: Tensor, rng=None) -> Tensor:
    """``y + u`` with ``u ~ U(-0.5, 0.5)`` held constant in the graph."""
    y = T.as_tensor(y)
    return y + Tensor(uniform_noise(y.shape, y.dtype, rng))


def likelihood(model: CodecModel, values, channel: int | None = None) -> Tensor:
    """Discretized logistic mass of ``values`` under the prior, floored at ``P_MIN``.

    With ``channel`` given, every entry of ``values`` uses that channel's
    parameters; otherwise ``values`` is NCHW and axis 1 is the channel.
    """
    values = T.as_tensor(values, dtype=model.dtype)
    mu = model.params["prior.mu"]
    log_scale = model.params["prior.log_scale"]
    if channel is None:
        mu = T.reshape(mu, (1, -1, 1, 1))
        log_scale = T.reshape(log_scale, (1, -1, 1, 1))
    else:
        mu = mu[channel]
        log_scale = log_scale[channel]
    inv_scale = T.exp(-log_scale)
    centered = values - mu
    # evaluate on the side of the mode where the two sigmoids do not cancel
    q = Tensor(np.where(centered.data > 0, -1.0, 1.0).astype(values.dtype))
    upper = T.sigmoid(q * (centered + 0.5) * inv_scale)
    lower = T.sigmoid(q * (centered - 0.5) * inv_scale)
    return T.maximum(q * (upper - lower), P_MIN)


def rate_estimate(model: CodecModel, latent) -> Tensor:
    """Estimated code length in bits: sum of ``-log2 likelihood``."""
    return T.tsum(-T.log2(likelihood(model, latent)))


def pad_to_multiple(x, factor: int) -> Tensor:
    x = T.as_tensor(x)
    h, w = x.shape[2], x.shape[3]
    return T.pad_edge(x, (-h) % factor, (-w) % factor)


def surrogate_pass(model: CodecModel, x, rng=None) -> tuple[Tensor, Tensor]:
    """Differentiable ``(x_tilde, bits)``; ``x`` may have any size, it is edge padded."""
    x = T.as_tensor(x)
    h, w = x.shape[2], x.shape[3]
    xp = pad_to_multiple(x, model.config.downsample_factor)
    y_tilde = quantize_surrogate(analyze(model, xp), rng)
    bits = rate_estimate(model, y_tilde)
    x_tilde = synthesize(model, y_tilde)
    if x_tilde.shape[2:] != (h, w):
        x_tilde = x_tilde[:, :, :h, :w]
    return x_tilde, bits


def latent_surrogate_pass(model: CodecModel, y, height: int, width: int, rng=None):
    """Surrogate pass starting from a latent instead of an image."""
    y_tilde = quantize_surrogate(y, rng)
    bits = rate_estimate(model, y_tilde)
    x_tilde = synthesize(model, y_tilde)
    if x_tilde.shape[2:] != (height, width):
        x_tilde = x_tilde[:, :, :height, :width]
    return x_tilde, bits


# -- real coding --------------------------------------------------------

def _as_image(x) -> np.ndarray:
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    if data.ndim == 3:
        data = data[None]
    if data.ndim != 4 or data.shape[0] != 1:
        raise ValueError(f"expected one image [1,C,H,W], got shape {data.shape}")
    return data


def encode_latent(model: CodecModel, y_hat, height: int, width: int) -> bytes:
    """Serialize an integer latent for an image of ``height x width`` pixels."""
    y = np.asarray(y_hat.data if isinstance(y_hat, Tensor) else y_hat)
    _, c, lh, lw = y.shape
    d = model.config.downsample_factor
    symbols = y.reshape(-1).astype(np.int64)
    channels = np.repeat(np.arange(c), lh * lw)
    payload = entropy.encode_symbols(symbols, channels, entropy.build_cdf(model))
    header = entropy.Header(model.fingerprint, height, width, model.config.image_channels,
                            lh * d, lw * d, c, lh, lw)
    return entropy.pack(header, payload)


def decode_latent(model: CodecModel, blob: bytes) -> tuple[entropy.Header, np.ndarray]:
    header, payload = entropy.unpack(blob)
    if header.fingerprint != model.fingerprint:
        raise entropy.BitstreamError(
            "model fingerprint mismatch: the bitstream was produced by a different model")
    c, lh, lw = header.latent_channels, header.latent_height, header.latent_width
    channels = np.repeat(np.arange(c), lh * lw)
    symbols = entropy.decode_symbols(payload, c * lh * lw, channels, entropy.build_cdf(model))
    return header, symbols.reshape(1, c, lh, lw).astype(model.dtype)


def reconstruct(model: CodecModel, y_hat, height: int, width: int) -> np.ndarray:
    """Decoder-side image from an integer latent, cropped and clamped to [0,1]."""
    with T.no_grad():
        x_hat = synthesize(model, y_hat).data
    return T.clamp01(x_hat[:, :, :height, :width])


def compress(model: CodecModel, x) -> tuple[bytes, np.ndarray]:
    """Hard path: returns the serialized bitstream and the integer latent."""
    data = _as_image(x).astype(model.dtype)
    h, w = data.shape[2], data.shape[3]
    with T.no_grad():
        y = analyze(model, pad_to_multiple(data, model.config.downsample_factor))
    y_hat = quantize_hard(y).data
    return encode_latent(model, y_hat, h, w), y_hat


def decompress(model: CodecModel, blob: bytes) -> np.ndarray:
    header, y_hat = decode_latent(model, blob)
    return reconstruct(model, y_hat, header.height, header.width)


def inference_pass(model: CodecModel, x) -> tuple[np.ndarray, bytes]:
    """``(x_hat, bitstream)``; ``x_hat`` is what a receiver decodes from the bytes."""
    blob, y_hat = compress(model, x)
    h, w = _as_image(x).shape[2:]
    return reconstruct(model, y_hat, h, w), blob
