"""Regenerate the bundled image corpus from scikit-image's sample images.

The sample photographs are public domain / CC0.  Each source is box-downscaled,
split into a training region and a held-out region, and written as binary PPM:

    src/snic/data/train/*.ppm   whole training regions (random crops are taken at train time)
    src/snic/data/eval/*.ppm    64x64 held-out crops
    src/snic/data/demo/*.ppm    larger held-out images (sizes not divisible by 16)

Run from the repository root:  python tools/build_corpus.py
"""

import shutil
from pathlib import Path

import numpy as np
import skimage.data

from snic.imageio import write_ppm

OUT = Path(__file__).resolve().parents[1] / "src" / "snic" / "data"
# (name, downscale factor)
SPLIT_SOURCES = [
    ("astronaut", 2), ("chelsea", 1), ("hubble_deep_field", 3), ("immunohistochemistry", 2),
    ("retina", 4), ("camera", 2), ("brick", 2), ("grass", 2), ("gravel", 2), ("coins", 1),
    ("moon", 2), ("cell", 2),
]
HELD_OUT = [("coffee", 2), ("rocket", 2)]
EVAL_CROPS = 32
MAX_TRAIN_SIDE = 256


def load(name: str, factor: int) -> np.ndarray:
    img = getattr(skimage.data, name)()
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    img = img[..., :3].astype(np.float64)
    h, w = (img.shape[0] // factor) * factor, (img.shape[1] // factor) * factor
    img = img[:h, :w].reshape(h // factor, factor, w // factor, factor, 3).mean(axis=(1, 3))
    return np.floor(img + 0.5).astype(np.uint8)


def main() -> None:
    rng = np.random.default_rng(2021)
    for sub in ("train", "eval", "demo"):
        shutil.rmtree(OUT / sub, ignore_errors=True)
        (OUT / sub).mkdir(parents=True)
    eval_regions = []
    for name, factor in SPLIT_SOURCES:
        img = load(name, factor)
        cut = (img.shape[1] * 3) // 4
        train = img[:MAX_TRAIN_SIDE, :min(cut, MAX_TRAIN_SIDE)]
        write_ppm(OUT / "train" / f"{name}.ppm", np.ascontiguousarray(train))
        eval_regions.append((name, img[:, cut:]))
    for name, factor in HELD_OUT:
        img = load(name, factor)
        eval_regions.append((name, img))
    coffee = load("coffee", 2)
    write_ppm(OUT / "demo" / "coffee.ppm", np.ascontiguousarray(coffee[20:140, 40:224]))

    crops = 0
    while crops < EVAL_CROPS:
        name, region = eval_regions[crops % len(eval_regions)]
        for _ in range(100):
            y = rng.integers(0, region.shape[0] - 64 + 1)
            x = rng.integers(0, region.shape[1] - 64 + 1)
            patch = region[y:y + 64, x:x + 64]
            if patch.std() / 255.0 > 0.04:
                break
        write_ppm(OUT / "eval" / f"{crops:02d}_{name}.ppm", np.ascontiguousarray(patch))
        crops += 1


if __name__ == "__main__":
    main()
