"""Substitutional neural image compression.

A small learned codec (``codec``) and a search that replaces the input image
with a nearby substitute the frozen codec compresses better (``substitute``).
"""

from .codec import CodecConfig, CodecModel, compress, decompress, load_model, save_model
from .metrics import MetricKind
from .substitute import (DistortionTarget, RateTarget, SnicConfig, SnicResult, TradeOff,
                         baseline, generate_substitute)

__version__ = "0.1.0"

__all__ = [
    "CodecConfig", "CodecModel", "compress", "decompress", "load_model", "save_model",
    "MetricKind", "DistortionTarget", "RateTarget", "SnicConfig", "SnicResult", "TradeOff",
    "baseline", "generate_substitute",
]
