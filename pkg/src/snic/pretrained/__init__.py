"""Bundled desk-scale model instances, one per training lambda."""

from pathlib import Path

LAMBDA_GRID = (0.001, 0.01, 0.1, 1.0)
_HERE = Path(__file__).resolve().parent


def model_path(lam: float) -> Path:
    return _HERE / f"lambda_{lam:g}.snic"


def load(lam: float, dtype=None):
    from ..codec import load_model

    path = model_path(lam)
    if not path.exists():
        raise FileNotFoundError(f"no bundled model for lambda={lam:g} ({path}); "
                                f"run tools/train_pretrained.py")
    return load_model(path) if dtype is None else load_model(path, dtype)


def available() -> list[float]:
    return [lam for lam in LAMBDA_GRID if model_path(lam).exists()]
