"""Search for a substitute image that the frozen codec compresses better.

The substitute differs from the original by a small, structured pattern.  We
write the original, the substitute, both reconstructions, and the difference
amplified 100x into ./demo_out.

    python demos/02_substitute.py [lambda]
"""

import sys
from pathlib import Path

import numpy as np

from snic import harness, imageio, pretrained
from snic.substitute import SnicConfig, TradeOff, baseline, generate_substitute

DEMO = Path(pretrained.__file__).resolve().parents[1] / "data" / "demo" / "coffee.ppm"
OUT = Path("demo_out")
OUT.mkdir(exist_ok=True)

lam = float(sys.argv[1]) if len(sys.argv) > 1 else 0.01
model = pretrained.load(lam)
x0 = imageio.load_image(DEMO)

base = baseline(model, x0)
res = generate_substitute(model, x0, TradeOff(lam), SnicConfig(steps=100, keep_best=True))

print(f"baseline   bpp {base.hard_bpp:.4f}  psnr {base.psnr:.2f}  loss {harness.hard_loss(lam, base, x0):.4f}")
print(f"substitute bpp {res.hard_bpp:.4f}  psnr {res.psnr:.2f}  loss {harness.hard_loss(lam, res, x0):.4f}")
print(f"surrogate objective {res.trace[0]:.4f} -> {res.final_objective:.4f} (best step {res.best_step})")

imageio.save_image(OUT / "original.ppm", x0)
imageio.save_image(OUT / "substitute.ppm", res.substitute)
imageio.save_image(OUT / "recon_original.ppm", base.reconstruction)
imageio.save_image(OUT / "recon_substitute.ppm", res.reconstruction)
imageio.save_image(OUT / "diff_x100.ppm", np.clip(np.abs(res.substitute - x0) * 100, 0, 1))
print(f"images written to {OUT}/")
