"""Evaluation protocols: R-D curves, control range, control precision, speed.

Every BPP reported here comes from the serialized bitstream.  Each image gets
its own seed derived from the experiment seed and the image id, so results do
not depend on processing order or on the number of workers.
"""

from __future__ import annotations

import csv
import math
import statistics
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import codec, imageio, metrics
from .codec import CodecModel
from .substitute import (DistortionTarget, RateTarget, SnicConfig, SnicResult, TradeOff,
                         baseline, generate_substitute, surrogate_rate_gap)

MODES = ("baseline", "snic-tradeoff", "snic-rate", "snic-distortion", "snic-latent")
DEFAULT_RD_MODES = ("baseline", "snic-tradeoff", "snic-rate")
CONTROL_GRID = tuple(float(v) for v in np.round(np.linspace(-0.25, 0.10, 8), 4))
SPEED_STEPS = (0, 5, 10, 50, 100, 500)


@dataclass
class RDPoint:
    image: str
    model: str
    mode: str
    bpp: float
    psnr: float
    ms_ssim: float
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        d.update(self.extra)
        return d


@dataclass
class PrecisionReport:
    target: float
    samples: int
    mean: float
    std: float
    min: float
    max: float
    tau: float = 0.0
    label: str = ""

    @property
    def offset(self) -> float:
        return self.mean - self.target

    def row(self) -> dict:
        d = asdict(self)
        d["offset"] = self.offset
        return d


@dataclass
class NamedModel:
    name: str
    model: CodecModel
    lam: float = math.nan

    @property
    def fingerprint(self) -> str:
        return self.model.fingerprint.hex()[:16]


def image_seed(seed: int, image: str) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(image.encode())]).generate_state(1)[0])


def load_images(directory, limit: int | None = None) -> list[tuple[str, np.ndarray]]:
    paths = imageio.list_images(directory)
    if limit is not None:
        paths = paths[:limit]
    return [(imageio.image_id(p), imageio.load_image(p)) for p in paths]


def _map(fn, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def hard_loss(lam: float, result: SnicResult, x0: np.ndarray) -> float:
    """Training loss evaluated on the real codec output: ``lam * MSE_255 + BPP``."""
    err = float(np.mean((result.reconstruction.astype(np.float64) - x0.astype(np.float64)) ** 2))
    return lam * 255.0 ** 2 * err + result.hard_bpp


def _point(image: str, nm: NamedModel, mode: str, res: SnicResult, x0, **extra) -> RDPoint:
    extra = {"fingerprint": nm.fingerprint, "lambda": nm.lam,
             "loss": hard_loss(nm.lam, res, x0) if math.isfinite(nm.lam) else math.nan,
             "steps": res.steps, **extra}
    if res.trace:
        extra["objective_initial"] = res.trace[0]
        extra["objective_final"] = res.final_objective
    return RDPoint(image, nm.name, mode, res.hard_bpp, res.psnr, res.ms_ssim, extra)


def _rd_job(job) -> list[RDPoint]:
    nm, image, x0, modes, steps, seed, keep_best = job
    out = []
    try:
        base = baseline(nm.model, x0)
    except Exception as exc:  # noqa: BLE001 -- a failed image must not stop the run
        return [RDPoint(image, nm.name, m, math.nan, math.nan, math.nan, {"error": repr(exc)}) for m in modes]
    s = image_seed(seed, image)
    for mode in modes:
        try:
            if mode == "baseline":
                res = base
            elif mode == "snic-tradeoff":
                res = generate_substitute(nm.model, x0, TradeOff(nm.lam), SnicConfig(steps, seed=s, keep_best=keep_best))
            elif mode == "snic-rate":
                # bit-rate matched MS-SSIM run: hinge at the image's own baseline BPP
                gap = surrogate_rate_gap(nm.model, x0, seed=s)
                target = RateTarget(base.hard_bpp, tau=gap, metric="ms-ssim")
                res = generate_substitute(nm.model, x0, target, SnicConfig(steps, seed=s, keep_best=keep_best))
            elif mode == "snic-distortion":
                target = DistortionTarget(base.psnr + 0.5, metric="psnr")
                res = generate_substitute(nm.model, x0, target, SnicConfig(steps, seed=s, keep_best=keep_best))
            elif mode == "snic-latent":
                res = generate_substitute(nm.model, x0, TradeOff(nm.lam),
                                          SnicConfig(steps, seed=s, variable="latent", keep_best=keep_best))
            else:
                raise ValueError(f"unknown mode {mode!r}")
            out.append(_point(image, nm, mode, res, x0))
        except Exception as exc:  # noqa: BLE001
            out.append(RDPoint(image, nm.name, mode, math.nan, math.nan, math.nan, {"error": repr(exc)}))
    return out


def _mean_rows(points: list[RDPoint], models: list[NamedModel], modes) -> list[RDPoint]:
    rows = []
    for nm in models:
        for mode in modes:
            sel = [p for p in points if p.model == nm.name and p.mode == mode and math.isfinite(p.bpp)]
            rows.append(RDPoint("mean", nm.name, mode,
                                float(np.mean([p.bpp for p in sel])) if sel else math.nan,
                                metrics.mean_psnr([p.psnr for p in sel]) if sel else math.nan,
                                float(np.mean([p.ms_ssim for p in sel])) if sel else math.nan,
                                {"fingerprint": nm.fingerprint, "lambda": nm.lam, "count": len(sel)}))
    return rows


def rd_curve(models: list[NamedModel], images: list[tuple[str, np.ndarray]], modes=DEFAULT_RD_MODES,
             steps: int = 100, seed: int = 0, keep_best: bool = True, workers: int = 1) -> list[RDPoint]:
    """One point per (model, image, mode) plus per-(model, mode) dataset means."""
    jobs = [(nm, image, x0, tuple(modes), steps, seed, keep_best) for nm in models for image, x0 in images]
    points = [p for chunk in _map(_rd_job, jobs, workers) for p in chunk]
    return points + _mean_rows(points, models, modes)


def _control_job(job) -> list[RDPoint]:
    nm, image, x0, grid, steps, seed, metric = job
    base = baseline(nm.model, x0)
    s = image_seed(seed, image)
    rows = []
    for offset in grid:
        target = RateTarget(max(0.0, base.hard_bpp + offset), metric=metric)
        res = generate_substitute(nm.model, x0, target, SnicConfig(steps, seed=s))
        rows.append(_point(image, nm, "snic-rate", res, x0, offset=offset, target=target.rate,
                           baseline_bpp=base.hard_bpp, baseline_psnr=base.psnr,
                           baseline_ms_ssim=base.ms_ssim))
    return rows


def control_range(nm: NamedModel, images, grid=CONTROL_GRID, steps: int = 100, seed: int = 0,
                  metric: str = "psnr", workers: int = 1) -> list[RDPoint]:
    """Sweep ``R_t = baseline BPP + offset`` for every offset in ``grid``."""
    jobs = [(nm, image, x0, tuple(grid), steps, seed, metric) for image, x0 in images]
    return [p for chunk in _map(_control_job, jobs, workers) for p in chunk]


def _precision_job(job) -> float:
    model, x0, target, config = job
    return generate_substitute(model, x0, target, config).hard_bpp


def _summarize(target: float, values: list[float], tau: float, label: str) -> PrecisionReport:
    std = statistics.pstdev(values) if len(values) > 1 else 0.0
    return PrecisionReport(target, len(values), float(np.mean(values)), std,
                           float(min(values)), float(max(values)), tau, label)


def precision(nm: NamedModel, x0: np.ndarray, offsets=(-0.05, -0.10, -0.15), samples: int = 100,
              steps: int = 100, seed: int = 0, fresh_seeds: bool = True, calibrate: bool = False,
              metric: str = "psnr", workers: int = 1) -> list[PrecisionReport]:
    """Realized-BPP spread of repeated rate-target runs on one image.

    With ``calibrate`` a second round per target reruns the same seeds with
    ``tau = -mean offset`` of the first round, so only the hinge moves.
    """
    if samples < 2:
        raise ValueError("precision needs at least 2 samples")
    base = baseline(nm.model, x0)
    reports = []
    for offset in offsets:
        rate = max(0.0, base.hard_bpp + offset)
        target = RateTarget(rate, metric=metric)
        seeds = [seed + i if fresh_seeds else seed for i in range(samples)]
        jobs = [(nm.model, x0, target, SnicConfig(steps, seed=s)) for s in seeds]
        values = _map(_precision_job, jobs, workers)
        first = _summarize(rate, values, 0.0, f"{offset:+g}")
        reports.append(first)
        if calibrate:
            tau = -first.offset
            shifted = RateTarget(rate, target.kappa, tau, target.metric)
            jobs = [(nm.model, x0, shifted, SnicConfig(steps, seed=s)) for s in seeds]
            reports.append(_summarize(rate, _map(_precision_job, jobs, workers), tau, f"{offset:+g} calibrated"))
    return reports


def speed(nm: NamedModel, images, steps_grid=SPEED_STEPS, repeats: int = 3, seed: int = 0,
          model_path=None, step_size: float | None = None) -> list[dict]:
    """Median-of-``repeats`` timing per image, averaged over images, per step count.

    Program time spans setup (model load when ``model_path`` is given, target
    and config construction) through the final hard-path compression;
    generation time covers the gradient updates only.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    rows = []
    for steps in steps_grid:
        prog, gen, psnrs, bpps = [], [], [], []
        for image, x0 in images:
            p_times, g_times = [], []
            for _ in range(repeats):
                t0 = time.perf_counter()
                model = codec.load_model(model_path) if model_path is not None else nm.model
                target = TradeOff(nm.lam)
                cfg = SnicConfig(steps, step_size=step_size, seed=image_seed(seed, image))
                res = generate_substitute(model, x0, target, cfg)
                p_times.append(time.perf_counter() - t0)
                g_times.append(res.generation_time)
            prog.append(statistics.median(p_times))
            gen.append(statistics.median(g_times))
            psnrs.append(res.psnr)
            bpps.append(res.hard_bpp)
        rows.append({"steps": steps, "program_s": float(np.mean(prog)), "generation_s": float(np.mean(gen)),
                     "psnr": metrics.mean_psnr(psnrs), "bpp": float(np.mean(bpps)), "images": len(images)})
    return rows


def linear_fit_r2(xs, ys) -> float:
    xs, ys = np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    total = np.sum((ys - ys.mean()) ** 2)
    return float(1.0 - np.sum(resid ** 2) / total) if total > 0 else 1.0


# -- CSV ------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, rows: list[dict], meta: dict) -> None:
    """Rows under a ``# key=value;...`` metadata line and a header row."""
    columns: list[str] = []
    for r in rows:
        for k in r:
            if k not in columns:
                columns.append(k)
    with open(path, "w", newline="") as f:
        f.write("# " + ";".join(f"{k}={v}" for k, v in meta.items()) + "\n")
        w = csv.DictWriter(f, fieldnames=columns, restval="", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def read_csv(path) -> tuple[dict, list[dict]]:
    lines = Path(path).read_text().splitlines()
    meta = {}
    if lines and lines[0].startswith("# "):
        for item in lines[0][2:].split(";"):
            if "=" in item:
                k, v = item.split("=", 1)
                meta[k] = v
        lines = lines[1:]
    return meta, list(csv.DictReader(lines))
