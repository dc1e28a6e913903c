"""Range coding of quantized latents and the bitstream container.

The coder is a 32-bit carry-propagating range coder with 16-bit probability
precision (LZMA-style byte output).  Everything inside the coding loop is
integer arithmetic.  Each latent channel gets its own cumulative frequency
table tabulated from the discretized logistic prior; values outside a
channel's support are sent as an escape symbol followed by a raw signed
16-bit value.
"""

from __future__ import annotations

import bisect
import math
import struct
from dataclasses import dataclass

import numpy as np

PRECISION = 16
TOTAL = 1 << PRECISION
TAIL_MASS = 2.0 ** -15
MAX_SUPPORT = 1 << 13
RAW_BITS = 16
# frequency-1 symbols on each side of the support: rare values then cost
# about PRECISION bits, the same as the likelihood floor, instead of an escape
GUARD = 8
RAW_OFFSET = 1 << (RAW_BITS - 1)

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF


class BitstreamError(ValueError):
    """Malformed, truncated or mismatched bitstream."""


@dataclass(frozen=True)
class CdfTable:
    """Per-channel cumulative frequencies.

    ``cdfs[c]`` has ``K_c + 2`` entries: ``K_c`` support symbols for the
    values ``offsets[c] .. offsets[c] + K_c - 1`` followed by the escape
    symbol.  ``cdfs[c][0] == 0`` and ``cdfs[c][-1] == TOTAL``.
    """

    offsets: tuple[int, ...]
    cdfs: tuple[tuple[int, ...], ...]

    @property
    def num_channels(self) -> int:
        return len(self.cdfs)

    def support(self, channel: int) -> tuple[int, int]:
        lo = self.offsets[channel]
        return lo, lo + len(self.cdfs[channel]) - 3

    def probability(self, value: int, channel: int) -> float:
        """Tabulated probability of ``value``, including the raw bits of an escape."""
        cdf = self.cdfs[channel]
        idx = value - self.offsets[channel]
        if 0 <= idx < len(cdf) - 2:
            return (cdf[idx + 1] - cdf[idx]) / TOTAL
        return (cdf[-1] - cdf[-2]) / TOTAL * 2.0 ** -RAW_BITS


def _logistic_cdf(t: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def logistic_pmf(values: np.ndarray, mu: float, scale: float) -> np.ndarray:
    """Discretized logistic mass, evaluated on the less cancellation-prone tail."""
    v = np.asarray(values, dtype=np.float64)
    q = np.where(v > mu, -1.0, 1.0)
    upper = _logistic_cdf(q * (v + 0.5 - mu) / scale)
    lower = _logistic_cdf(q * (v - 0.5 - mu) / scale)
    return q * (upper - lower)


def quantize_pmf(pmf: np.ndarray) -> np.ndarray:
    """Integer frequencies summing to TOTAL with every entry at least 1."""
    pmf = np.clip(np.asarray(pmf, dtype=np.float64), 0.0, None)
    k = len(pmf)
    if k >= TOTAL:
        raise ValueError(f"too many symbols ({k}) for {PRECISION}-bit precision")
    spare = TOTAL - k
    freq = np.floor(pmf * spare).astype(np.int64) + 1
    freq[int(np.argmax(pmf))] += TOTAL - int(freq.sum())
    return freq


def channel_cdf(mu: float, scale: float) -> tuple[int, tuple[int, ...]]:
    """Support offset and cumulative frequencies for one logistic channel."""
    if not (math.isfinite(mu) and math.isfinite(scale)) or scale <= 0:
        raise ValueError(f"degenerate entropy parameters: mu={mu}, scale={scale}")
    # each tail beyond the support holds at most TAIL_MASS / 2
    half = scale * math.log(2.0 / TAIL_MASS - 1.0)
    lo = math.floor(mu + 0.5 - half) - GUARD
    hi = math.ceil(mu - 0.5 + half) + GUARD
    if hi - lo + 1 > MAX_SUPPORT:
        raise ValueError(f"degenerate scale {scale}: support of {hi - lo + 1} symbols")
    if lo < -RAW_OFFSET or hi >= RAW_OFFSET:
        raise ValueError(f"entropy location {mu} outside the coder range")
    values = np.arange(lo, hi + 1)
    pmf = logistic_pmf(values, mu, scale)
    escape = max(0.0, 1.0 - float(pmf.sum()))
    freq = quantize_pmf(np.append(pmf, escape))
    cdf = np.concatenate([[0], np.cumsum(freq)])
    return lo, tuple(int(c) for c in cdf)


def build_cdf(model) -> CdfTable:
    """Tabulate the prior of ``model`` (anything with ``entropy_params()``)."""
    mu, scale = model.entropy_params()
    offsets, cdfs = [], []
    for m, s in zip(np.asarray(mu, dtype=np.float64), np.asarray(scale, dtype=np.float64)):
        lo, cdf = channel_cdf(float(m), float(s))
        offsets.append(lo)
        cdfs.append(cdf)
    return CdfTable(tuple(offsets), tuple(cdfs))


def cross_entropy_bits(symbols, channels, table: CdfTable) -> float:
    """Ideal code length of ``symbols`` under the tabulated probabilities."""
    return float(sum(-math.log2(table.probability(int(v), int(c)))
                     for v, c in zip(symbols, channels)))


# -- range coder ----------------------------------------------------------

class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self) -> None:
        low = self.low
        if low < 0xFF000000 or low > _MASK32:
            carry = low >> 32
            temp = self.cache
            while True:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (low & 0x00FFFFFF) << 8

    def encode(self, start: int, size: int) -> None:
        r = self.range >> PRECISION
        self.low += r * start
        self.range = r * size
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def finish(self) -> bytes:
        # the value ceil(low / 2^24) * 2^24 lies inside [low, low + range) and
        # needs a single byte beyond the ones already shifted out
        self.low = (self.low + _TOP - 1) & ~(_TOP - 1)
        self._shift_low()
        self._shift_low()
        out = bytes(self.out)
        assert out[0] == 0
        return out[1:]


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0
        self.range = _MASK32
        self.low = 0
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        pos = self.pos
        self.pos = pos + 1
        if pos < len(self.data):
            return self.data[pos]
        if pos >= len(self.data) + 3:
            raise BitstreamError("payload truncated: decoder ran past the end of the stream")
        return 0

    def target(self) -> int:
        cf = self.code // (self.range >> PRECISION)
        if cf >= TOTAL:
            raise BitstreamError("corrupt payload: code value outside the coding interval")
        return cf

    def consume(self, start: int, size: int) -> None:
        r = self.range >> PRECISION
        self.code -= r * start
        self.low = (self.low + r * start) & _MASK32
        self.range = r * size
        while self.range < _TOP:
            self.range <<= 8
            self.low = (self.low << 8) & _MASK32
            self.code = (self.code << 8) | self._next_byte()

    def finish(self) -> None:
        """Check that the stream ended exactly where the encoder ended it."""
        if self.pos != len(self.data) + 3:
            raise BitstreamError(
                f"payload length mismatch: consumed {self.pos - 3} of {len(self.data)} bytes")
        if self.code >= _TOP or (self.low + self.code) & (_TOP - 1):
            raise BitstreamError("corrupt payload: final coder state is inconsistent")


def encode_symbols(symbols, channels, table: CdfTable) -> bytes:
    """Range-code integer ``symbols``; ``channels[i]`` selects the table row."""
    symbols = np.asarray(symbols, dtype=np.int64).reshape(-1)
    channels = np.asarray(channels, dtype=np.int64).reshape(-1)
    if symbols.shape != channels.shape:
        raise ValueError("symbols and channels must have the same length")
    enc = RangeEncoder()
    cdfs, offsets = table.cdfs, table.offsets
    for v, c in zip(symbols.tolist(), channels.tolist()):
        cdf = cdfs[c]
        idx = v - offsets[c]
        if 0 <= idx < len(cdf) - 2:
            enc.encode(cdf[idx], cdf[idx + 1] - cdf[idx])
        else:
            if not -RAW_OFFSET <= v < RAW_OFFSET:
                raise ValueError(f"symbol {v} does not fit the {RAW_BITS}-bit escape")
            enc.encode(cdf[-2], cdf[-1] - cdf[-2])
            enc.encode(v + RAW_OFFSET, 1)
    return enc.finish()


def decode_symbols(data: bytes, count: int, channels, table: CdfTable) -> np.ndarray:
    """Inverse of :func:`encode_symbols`; raises :class:`BitstreamError` on bad input."""
    channels = np.asarray(channels, dtype=np.int64).reshape(-1)
    if len(channels) != count:
        raise ValueError(f"expected {count} channel ids, got {len(channels)}")
    dec = RangeDecoder(data)
    cdfs, offsets = table.cdfs, table.offsets
    out = np.empty(count, dtype=np.int64)
    for i, c in enumerate(channels.tolist()):
        cdf = cdfs[c]
        cf = dec.target()
        idx = bisect.bisect_right(cdf, cf) - 1
        dec.consume(cdf[idx], cdf[idx + 1] - cdf[idx])
        if idx == len(cdf) - 2:
            raw = dec.target()
            dec.consume(raw, 1)
            out[i] = raw - RAW_OFFSET
        else:
            out[i] = idx + offsets[c]
    dec.finish()
    return out


# -- container ------------------------------------------------------------

MAGIC = b"SNIB"
VERSION = 1
_HEADER = struct.Struct("<4sHH32s10I")
HEADER_SIZE = _HEADER.size


@dataclass(frozen=True)
class Header:
    fingerprint: bytes
    height: int
    width: int
    channels: int
    padded_height: int
    padded_width: int
    latent_channels: int
    latent_height: int
    latent_width: int
    version: int = VERSION

    @property
    def num_pixels(self) -> int:
        return self.height * self.width


def pack(header: Header, payload: bytes) -> bytes:
    if len(header.fingerprint) != 32:
        raise ValueError("fingerprint must be 32 bytes")
    head = _HEADER.pack(MAGIC, header.version, 0, header.fingerprint,
                        header.height, header.width, header.channels,
                        header.padded_height, header.padded_width,
                        header.latent_channels, header.latent_height, header.latent_width,
                        len(payload), 0)
    return head + bytes(payload)


def unpack(blob: bytes) -> tuple[Header, bytes]:
    if len(blob) < HEADER_SIZE:
        raise BitstreamError(f"bitstream too short for a header ({len(blob)} bytes)")
    magic, version, _flags, fp, h, w, c, ph, pw, lc, lh, lw, n, _ = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BitstreamError(f"bad magic {magic!r}, not a SNIC bitstream")
    if version != VERSION:
        raise BitstreamError(f"unsupported bitstream version {version}")
    payload = bytes(blob[HEADER_SIZE:])
    if len(payload) != n:
        raise BitstreamError(f"payload length {len(payload)} does not match header ({n})")
    return Header(fp, h, w, c, ph, pw, lc, lh, lw, version), payload


def payload_bpp(blob: bytes) -> float:
    """Bits per pixel of the payload, from the serialized bytes alone."""
    header, payload = unpack(blob)
    return 8.0 * len(payload) / header.num_pixels
