"""Pin the bit rate to a target with the hinge-penalized objective.

Sweeps targets around the baseline BPP of a few evaluation images and prints
the realized rate next to the target.  Targets below the baseline are
reachable; targets above it saturate a little above the baseline.

    python demos/03_bitrate_control.py
"""

from pathlib import Path

from snic import harness, pretrained

EVAL = Path(pretrained.__file__).resolve().parents[1] / "data" / "eval"

nm = harness.NamedModel("lambda_0.1", pretrained.load(0.1), 0.1)
images = harness.load_images(EVAL, limit=3)
points = harness.control_range(nm, images, grid=(-0.2, -0.1, 0.0, 0.1), steps=100)

for p in points:
    print(f"{p.image:26s} baseline {p.extra['baseline_bpp']:.3f}  target {p.extra['target']:.3f}  "
          f"realized {p.bpp:.3f}  psnr {p.psnr:.2f} (baseline {p.extra['baseline_psnr']:.2f})")
