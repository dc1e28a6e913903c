import math

import numpy as np
import pytest

from snic import codec as C
from snic import harness as H


@pytest.fixture(scope="module")
def nm():
    m = C.CodecModel.initialize(C.CodecConfig(channels=(4, 4, 4), latent_channels=4, kernel_size=3), seed=2)
    m.params["prior.log_scale"].data[:] = 0.5
    return H.NamedModel("tiny", m, 0.01)


@pytest.fixture(scope="module")
def images():
    rng = np.random.default_rng(0)
    return [(f"im{i}", rng.uniform(size=(1, 3, 16, 16)).astype(np.float32)) for i in range(3)]


def test_rd_curve_rows(nm, images, tmp_path):
    pts = H.rd_curve([nm], images, ("baseline", "snic-tradeoff"), steps=2)
    assert len(pts) == 3 * 2 + 2
    assert {p.image for p in pts} == {"im0", "im1", "im2", "mean"}
    path = tmp_path / "rd.csv"
    H.write_csv(path, [p.row() for p in pts], {"seed": 0, "model": nm.fingerprint})
    meta, rows = H.read_csv(path)
    assert meta == {"seed": "0", "model": nm.fingerprint}
    assert len(rows) == 8 and float(rows[0]["bpp"]) == pts[0].bpp


def test_rd_curve_records_failures(nm, images):
    bad = [("odd", np.zeros((1, 3, 4), dtype=np.float32))]
    pts = H.rd_curve([nm], bad + images[:1], ("baseline",), steps=1)
    err = [p for p in pts if p.image == "odd"][0]
    assert "error" in err.extra and math.isnan(err.bpp)
    assert math.isfinite([p for p in pts if p.image == "im0"][0].bpp)


def test_determinism_across_workers(nm, images, tmp_path):
    a = H.rd_curve([nm], images, ("baseline", "snic-rate"), steps=2, workers=1)
    b = H.rd_curve([nm], images, ("baseline", "snic-rate"), steps=2, workers=2)
    for name, pts in (("a", a), ("b", b)):
        H.write_csv(tmp_path / f"{name}.csv", [p.row() for p in pts], {"seed": 0})
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_image_seed_independent_of_order():
    assert H.image_seed(0, "a") == H.image_seed(0, "a")
    assert H.image_seed(0, "a") != H.image_seed(0, "b")
    assert H.image_seed(0, "a") != H.image_seed(1, "a")


def test_control_range_grid(nm, images):
    pts = H.control_range(nm, images[:2], grid=(-0.05, 0.0), steps=2)
    assert len(pts) == 4
    assert [p.extra["offset"] for p in pts[:2]] == [-0.05, 0.0]


def test_precision_report(nm, images):
    reps = H.precision(nm, images[0][1], offsets=(-0.02,), samples=3, steps=2, calibrate=True)
    assert [r.label for r in reps] == ["-0.02", "-0.02 calibrated"]
    assert reps[0].samples == 3 and reps[0].std >= 0
    assert reps[1].tau == pytest.approx(-reps[0].offset)
    with pytest.raises(ValueError):
        H.precision(nm, images[0][1], samples=1)


def test_speed_rows(nm, images):
    rows = H.speed(nm, images[:1], steps_grid=(0, 2), repeats=1)
    assert [r["steps"] for r in rows] == [0, 2]
    assert rows[1]["generation_s"] > rows[0]["generation_s"]


def test_linear_fit():
    assert H.linear_fit_r2([0, 1, 2, 3], [1, 3, 5, 7]) == pytest.approx(1.0)
    assert H.linear_fit_r2([0, 1, 2, 3], [0, 1, 0, 1]) < 0.5


def test_loaded_images_are_contiguous(tmp_path, images):
    from snic import imageio

    imageio.save_image(tmp_path / "a.ppm", images[0][1])
    assert imageio.load_image(tmp_path / "a.ppm").flags["C_CONTIGUOUS"]
