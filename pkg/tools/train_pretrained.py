"""Train the four bundled model instances (lambda grid 0.001, 0.01, 0.1, 1).

    python tools/train_pretrained.py [--steps 8000]

Writes src/snic/pretrained/lambda_<lam>.snic and a training-curve CSV next to it.
"""

import argparse
import csv
import logging
from pathlib import Path

from snic import codec, train
from snic.pretrained import LAMBDA_GRID, model_path

DATA = Path(__file__).resolve().parents[1] / "src" / "snic" / "data" / "train"


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=8000)
    ap.add_argument("--decay-step", type=int, default=3000, help="drop lr 1e-3 -> 1e-4 here")
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--init", default="", help="warm-start model file")
    ap.add_argument("--lambdas", type=float, nargs="*", default=list(LAMBDA_GRID))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    for lam in args.lambdas:
        cfg = train.TrainConfig(lam=lam, steps=args.steps, dataset=str(DATA), log_every=200,
                                lr_decay_step=args.decay_step, lr=args.lr, init=args.init)
        result = train.train(cfg)
        out = model_path(lam)
        codec.save_model(result.model, out)
        with open(out.with_suffix(".csv"), "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(result.curve[0]))
            w.writeheader()
            w.writerows(result.curve)
        logging.info("lambda %g: val loss %.4f -> %.4f, wrote %s", lam,
                     result.initial_val_loss, result.final_val_loss, out)


if __name__ == "__main__":
    main()
