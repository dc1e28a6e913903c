"""How tightly does the rate target hold across noise draws?

Repeats the rate-target search with fresh seeds and reports the spread of
realized BPP, then reruns with the hinge offset tau set from the first round.
A smaller sample count than the acceptance run keeps this quick.

    python demos/04_precision.py [samples]
"""

import sys
from pathlib import Path

from snic import harness, pretrained

EVAL = Path(pretrained.__file__).resolve().parents[1] / "data" / "eval"
samples = int(sys.argv[1]) if len(sys.argv) > 1 else 10

nm = harness.NamedModel("lambda_1", pretrained.load(1.0), 1.0)
name, x0 = next(i for i in harness.load_images(EVAL) if i[0] == "22_gravel")
for r in harness.precision(nm, x0, offsets=(-0.05, -0.10, -0.15), samples=samples, calibrate=True):
    print(f"{name} target {r.label:>16s}: mean offset {r.offset:+.4f}  std {r.std:.4f}  "
          f"range [{r.min:.4f}, {r.max:.4f}]  tau {r.tau:+.4f}")
