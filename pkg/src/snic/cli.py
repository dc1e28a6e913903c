"""Command-line entry point: ``snic <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import codec, entropy, harness, imageio, metrics, pretrained, train
from .substitute import DistortionTarget, RateTarget, SnicConfig, TradeOff, baseline, generate_substitute

log = logging.getLogger("snic")


def resolve_model(spec: str) -> harness.NamedModel:
    """``path/to/model.snic`` or ``bundled:<lambda>``."""
    if spec.startswith("bundled:"):
        lam = float(spec.split(":", 1)[1])
        return harness.NamedModel(f"lambda_{lam:g}", pretrained.load(lam), lam)
    path = Path(spec)
    model = codec.load_model(path)
    lam = math.nan
    if path.stem.startswith("lambda_"):
        try:
            lam = float(path.stem[len("lambda_"):])
        except ValueError:
            pass
    return harness.NamedModel(path.stem, model, lam)


def _meta(**kw) -> dict:
    return {k: (",".join(map(str, v)) if isinstance(v, (list, tuple)) else v) for k, v in kw.items()}


def _report(label: str, bpp: float, psnr: float, ssim: float) -> None:
    print(f"{label}: bpp={bpp:.4f} psnr={metrics.display_psnr(psnr):.3f}dB ms-ssim={ssim:.5f}")


# -- subcommands ----------------------------------------------------------

def cmd_train(args) -> int:
    cfg = train.load_config(args.config)
    lambdas = list(pretrained.LAMBDA_GRID) if args.lambda_grid else [cfg.lam]
    out = Path(args.out)
    for lam in lambdas:
        cfg_l = train.TrainConfig(**{**cfg.__dict__, "lam": lam})
        result = train.train(cfg_l)
        target = out / f"lambda_{lam:g}.snic" if args.lambda_grid else out
        target.parent.mkdir(parents=True, exist_ok=True)
        codec.save_model(result.model, target)
        curve = target.with_suffix(".csv")
        harness.write_csv(curve, result.curve, _meta(fingerprint=result.model.fingerprint.hex()[:16],
                                                      seed=cfg_l.seed, lam=lam, steps=cfg_l.steps))
        print(f"wrote {target} (fingerprint {result.model.fingerprint.hex()[:16]}), curve {curve}; "
              f"validation loss {result.initial_val_loss:.4f} -> {result.final_val_loss:.4f}")
    return 0


def cmd_compress(args) -> int:
    nm = resolve_model(args.model)
    x = imageio.load_image(args.input)
    res = baseline(nm.model, x)
    Path(args.output).write_bytes(res.bitstream)
    _report("compressed", res.hard_bpp, res.psnr, res.ms_ssim)
    return 0


def cmd_decompress(args) -> int:
    nm = resolve_model(args.model)
    blob = Path(args.input).read_bytes()
    x_hat = codec.decompress(nm.model, blob)
    imageio.save_image(args.output, x_hat)
    bpp = entropy.payload_bpp(blob)
    if args.reference:
        x0 = imageio.load_image(args.reference)
        from .metrics import ms_ssim as _ms

        _report("decompressed", bpp, metrics.psnr(x_hat, x0), float(_ms(x_hat.astype(np.float64),
                                                                         x0.astype(np.float64)).data))
    else:
        print(f"decompressed: bpp={bpp:.4f} size={x_hat.shape[3]}x{x_hat.shape[2]}")
    return 0


def _target_from_args(args, base) -> object:
    metric = metrics.MetricKind.parse(args.metric)
    if args.target == "tradeoff":
        lam = args.lambda_s
        if lam is None:
            raise SystemExit("--lambda-s is required for the trade-off target")
        return TradeOff(lam, metric)
    kappa = args.kappa
    if args.target == "rate":
        if args.rate is None and args.rate_offset is None:
            raise SystemExit("rate target needs --rate or --rate-offset")
        rate = args.rate if args.rate is not None else base.hard_bpp + args.rate_offset
        return RateTarget(max(0.0, rate), kappa, args.tau, metric)
    if args.level is None:
        raise SystemExit("distortion target needs --level (dB for psnr, score for ms-ssim)")
    return DistortionTarget(args.level, metric, kappa, args.tau)


def cmd_snic(args) -> int:
    nm = resolve_model(args.model)
    x0 = imageio.load_image(args.input)
    base = baseline(nm.model, x0)
    if args.target == "tradeoff" and args.lambda_s is None and math.isfinite(nm.lam):
        args.lambda_s = nm.lam
    target = _target_from_args(args, base)
    cfg = SnicConfig(steps=args.steps, step_size=args.step_size, variable=args.variable,
                     noise=args.noise, keep_best=args.keep_best, update=args.update, seed=args.seed)
    res = generate_substitute(nm.model, x0, target, cfg)
    if args.output:
        Path(args.output).write_bytes(res.bitstream)
    if args.substitute and res.variable == "pixel":
        imageio.save_image(args.substitute, res.substitute)
    if args.diff and res.variable == "pixel":
        diff = np.clip(np.abs(res.substitute.astype(np.float64) - x0) * 100.0, 0.0, 1.0)
        imageio.save_image(args.diff, diff)
    _report("baseline", base.hard_bpp, base.psnr, base.ms_ssim)
    _report("snic", res.hard_bpp, res.psnr, res.ms_ssim)
    row = {"image": imageio.image_id(args.input), "model": nm.name, "fingerprint": nm.fingerprint,
           "target": type(target).__name__, "steps": res.steps, "seed": args.seed,
           "baseline_bpp": base.hard_bpp, "baseline_psnr": base.psnr, "baseline_ms_ssim": base.ms_ssim,
           "bpp": res.hard_bpp, "psnr": res.psnr, "ms_ssim": res.ms_ssim,
           "objective_initial": res.trace[0], "objective_final": res.final_objective,
           "surrogate_bpp": res.surrogate_bpp, "best_step": res.best_step}
    if math.isfinite(nm.lam):
        row["loss_baseline"] = harness.hard_loss(nm.lam, base, x0)
        row["loss"] = harness.hard_loss(nm.lam, res, x0)
        print(f"loss (lambda={nm.lam:g}): baseline {row['loss_baseline']:.4f} -> snic {row['loss']:.4f}")
    if args.report:
        harness.write_csv(args.report, [row], _meta(fingerprint=nm.fingerprint, seed=args.seed,
                                                     target=repr(target)))
    return 0


def _write_points(path, points, meta) -> None:
    harness.write_csv(path, [p.row() for p in points], meta)
    print(f"wrote {len(points)} rows to {path}")


def cmd_rd_curve(args) -> int:
    models = [resolve_model(m) for m in args.models]
    images = harness.load_images(args.images, args.limit)
    points = harness.rd_curve(models, images, args.modes, steps=args.steps, seed=args.seed,
                              keep_best=not args.no_keep_best, workers=args.workers)
    _write_points(args.out, points, _meta(models=[m.fingerprint for m in models], seed=args.seed,
                                          steps=args.steps, modes=args.modes, images=args.images))
    for p in points:
        if p.image == "mean":
            _report(f"{p.model} {p.mode}", p.bpp, p.psnr, p.ms_ssim)
    return 0


def cmd_control_range(args) -> int:
    nm = resolve_model(args.model)
    images = harness.load_images(args.images, args.limit)
    points = harness.control_range(nm, images, args.grid, steps=args.steps, seed=args.seed,
                                   metric=args.metric, workers=args.workers)
    _write_points(args.out, points, _meta(model=nm.fingerprint, seed=args.seed, grid=args.grid,
                                          steps=args.steps, metric=args.metric))
    return 0


def cmd_precision(args) -> int:
    nm = resolve_model(args.model)
    x0 = imageio.load_image(args.image)
    reports = harness.precision(nm, x0, args.offsets, samples=args.samples, steps=args.steps,
                                seed=args.seed, calibrate=args.calibrate, workers=args.workers)
    harness.write_csv(args.out, [r.row() for r in reports],
                      _meta(model=nm.fingerprint, seed=args.seed, offsets=args.offsets,
                            samples=args.samples, steps=args.steps))
    for r in reports:
        print(f"target {r.label}: mean offset {r.offset:+.4f} std {r.std:.4f} "
              f"[{r.min:.4f}, {r.max:.4f}] tau={r.tau:+.4f}")
    return 0


def cmd_speed(args) -> int:
    nm = resolve_model(args.model)
    images = harness.load_images(args.images, args.limit)
    model_path = None if args.model.startswith("bundled:") else args.model
    rows = harness.speed(nm, images, args.steps_grid, repeats=args.repeats, seed=args.seed,
                         model_path=model_path)
    harness.write_csv(args.out, rows, _meta(model=nm.fingerprint, seed=args.seed,
                                            steps=args.steps_grid, repeats=args.repeats))
    for r in rows:
        print(f"steps {r['steps']:>4}: program {r['program_s']:.3f}s generation {r['generation_s']:.3f}s "
              f"psnr {r['psnr']:.3f}")
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="snic", description="Learned image codec with substitute search.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a codec from a key=value config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True, help="model file (or directory with --lambda-grid)")
    t.add_argument("--lambda-grid", action="store_true", help="train the 0.001/0.01/0.1/1 grid")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compress", help="encode an image with a frozen model")
    c.add_argument("--model", required=True)
    c.add_argument("--input", required=True)
    c.add_argument("--output", required=True)
    c.set_defaults(func=cmd_compress)

    d = sub.add_parser("decompress", help="decode a bitstream to a PPM")
    d.add_argument("--model", required=True)
    d.add_argument("--input", required=True)
    d.add_argument("--output", required=True)
    d.add_argument("--reference", help="original image, to print PSNR/MS-SSIM")
    d.set_defaults(func=cmd_decompress)

    s = sub.add_parser("snic", help="compress a substitute of the input image")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output", help="bitstream of the substitute")
    s.add_argument("--substitute", help="write the substitute image (PPM)")
    s.add_argument("--diff", help="write |substitute - original| x 100 (PPM)")
    s.add_argument("--report", help="CSV report")
    s.add_argument("--target", choices=["tradeoff", "rate", "distortion"], default="tradeoff")
    s.add_argument("--metric", default="psnr", choices=["psnr", "ms-ssim", "mse"])
    s.add_argument("--lambda-s", type=float)
    s.add_argument("--rate", type=float, help="target BPP")
    s.add_argument("--rate-offset", type=float, help="target BPP relative to the baseline")
    s.add_argument("--level", type=float, help="distortion target in metric units")
    s.add_argument("--kappa", type=float, default=2.0 ** 10)
    s.add_argument("--tau", type=float, default=0.0)
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--step-size", type=float)
    s.add_argument("--variable", choices=["pixel", "latent"], default="pixel")
    s.add_argument("--noise", choices=["per-step", "fixed"], default="per-step")
    s.add_argument("--update", choices=["gradient", "normalized", "sign"], default="normalized")
    s.add_argument("--keep-best", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_snic)

    r = sub.add_parser("rd-curve", help="R-D points over an image directory")
    r.add_argument("--models", nargs="+", required=True)
    r.add_argument("--images", required=True)
    r.add_argument("--modes", nargs="+", default=list(harness.DEFAULT_RD_MODES), choices=harness.MODES)
    r.add_argument("--out", required=True)
    r.add_argument("--steps", type=int, default=100)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--limit", type=int)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--no-keep-best", action="store_true")
    r.set_defaults(func=cmd_rd_curve)

    cr = sub.add_parser("control-range", help="sweep rate targets around the baseline")
    cr.add_argument("--model", required=True)
    cr.add_argument("--images", required=True)
    cr.add_argument("--grid", type=float, nargs="+", default=list(harness.CONTROL_GRID),
                    help="BPP offsets from each image's baseline")
    cr.add_argument("--metric", default="psnr", choices=["psnr", "ms-ssim"])
    cr.add_argument("--out", required=True)
    cr.add_argument("--steps", type=int, default=100)
    cr.add_argument("--seed", type=int, default=0)
    cr.add_argument("--limit", type=int)
    cr.add_argument("--workers", type=int, default=1)
    cr.set_defaults(func=cmd_control_range)

    pr = sub.add_parser("precision", help="spread of realized BPP over repeated runs")
    pr.add_argument("--model", required=True)
    pr.add_argument("--image", required=True)
    pr.add_argument("--offsets", type=float, nargs="+", default=[-0.05, -0.10, -0.15])
    pr.add_argument("--samples", type=int, default=100)
    pr.add_argument("--steps", type=int, default=100)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--calibrate", action="store_true")
    pr.add_argument("--out", required=True)
    pr.add_argument("--workers", type=int, default=1)
    pr.set_defaults(func=cmd_precision)

    sp = sub.add_parser("speed", help="time per image against step count")
    sp.add_argument("--model", required=True)
    sp.add_argument("--images", required=True)
    sp.add_argument("--steps-grid", type=int, nargs="+", default=list(harness.SPEED_STEPS))
    sp.add_argument("--repeats", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--limit", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_speed)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, entropy.BitstreamError, train.TrainingDiverged) as exc:
        print(f"snic {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
