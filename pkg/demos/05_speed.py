"""Time per image against the number of gradient steps.

    python demos/05_speed.py
"""

from pathlib import Path

from snic import harness, pretrained

EVAL = Path(pretrained.__file__).resolve().parents[1] / "data" / "eval"

nm = harness.NamedModel("lambda_0.001", pretrained.load(0.001), 0.001)
images = harness.load_images(EVAL, limit=4)
rows = harness.speed(nm, images, steps_grid=(0, 5, 10, 50, 100), repeats=3,
                     model_path=pretrained.model_path(0.001))
print("steps  program_s  generation_s  psnr")
for r in rows:
    print(f"{r['steps']:>5}  {r['program_s']:9.3f}  {r['generation_s']:12.3f}  {r['psnr']:.3f}")
fit = harness.linear_fit_r2([r["steps"] for r in rows], [r["generation_s"] for r in rows])
print(f"linear fit of generation time: R^2 = {fit:.4f}")
