"""Compress the demo image with each bundled model and print the R-D points.

    python demos/01_compress.py
"""

from pathlib import Path

from snic import codec, imageio, pretrained
from snic.substitute import baseline

DEMO = Path(pretrained.__file__).resolve().parents[1] / "data" / "demo" / "coffee.ppm"

x0 = imageio.load_image(DEMO)
print(f"{DEMO.name}: {x0.shape[3]}x{x0.shape[2]} pixels")

for lam in pretrained.LAMBDA_GRID:
    model = pretrained.load(lam)
    res = baseline(model, x0)
    # the receiver only sees the bytes; decoding them must give the same image
    assert (codec.decompress(model, res.bitstream) == res.reconstruction).all()
    print(f"lambda {lam:<6g} {len(res.bitstream):5d} bytes  bpp {res.hard_bpp:.3f}  "
          f"psnr {res.psnr:.2f} dB  ms-ssim {res.ms_ssim:.4f}")
