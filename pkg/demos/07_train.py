"""Train a small codec from scratch on the bundled corpus.

A few hundred steps are enough to see the loss fall; the bundled models were
trained the same way for 8000 steps (tools/train_pretrained.py).

    python demos/07_train.py [steps]
"""

import logging
import sys
from pathlib import Path

from snic import train

DATA = Path(train.__file__).resolve().parent / "data" / "train"
logging.basicConfig(level=logging.INFO, format="%(message)s")

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
cfg = train.TrainConfig(lam=0.01, steps=steps, dataset=str(DATA), log_every=50)
result = train.train(cfg)
print(f"validation loss {result.initial_val_loss:.3f} -> {result.final_val_loss:.3f}")
