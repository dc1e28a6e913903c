"""Optimize the latent instead of the pixels.

Skipping the analysis transform makes each step cheaper; the result is sent
directly as the quantized latent.

    python demos/06_latent.py
"""

from pathlib import Path

from snic import harness, pretrained
from snic.substitute import SnicConfig, TradeOff, baseline, generate_substitute

EVAL = Path(pretrained.__file__).resolve().parents[1] / "data" / "eval"

lam = 0.01
model = pretrained.load(lam)
for name, x0 in harness.load_images(EVAL, limit=4):
    base = baseline(model, x0)
    pix = generate_substitute(model, x0, TradeOff(lam), SnicConfig(100))
    lat = generate_substitute(model, x0, TradeOff(lam), SnicConfig(100, variable="latent"))
    print(f"{name:26s} base {base.psnr:.2f} dB / {base.hard_bpp:.3f} bpp | "
          f"pixel {pix.psnr:.2f} / {pix.hard_bpp:.3f} in {pix.generation_time:.2f}s | "
          f"latent {lat.psnr:.2f} / {lat.hard_bpp:.3f} in {lat.generation_time:.2f}s")
