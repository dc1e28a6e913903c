import numpy as np
import pytest

from snic import cli, codec as C, harness as H, imageio


@pytest.fixture
def setup(tmp_path, rng):
    m = C.CodecModel.initialize(C.CodecConfig(channels=(4, 4, 4), latent_channels=4, kernel_size=3), seed=2)
    model = tmp_path / "lambda_0.01.snic"
    C.save_model(m, model)
    imgs = tmp_path / "imgs"
    imgs.mkdir()
    for i in range(2):
        imageio.write_ppm(imgs / f"{i}.ppm", rng.integers(0, 256, (16, 20, 3), dtype=np.uint8))
    return tmp_path, model, imgs


def run(*args):
    return cli.main([str(a) for a in args])


def test_compress_decompress(setup, capsys):
    tmp, model, imgs = setup
    assert run("compress", "--model", model, "--input", imgs / "0.ppm", "--output", tmp / "a.bin") == 0
    assert run("decompress", "--model", model, "--input", tmp / "a.bin", "--output", tmp / "a.ppm",
               "--reference", imgs / "0.ppm") == 0
    assert imageio.read_pnm(tmp / "a.ppm").shape == (16, 20, 3)
    assert "psnr=" in capsys.readouterr().out


def test_decompress_refuses_other_model(setup, capsys):
    tmp, model, imgs = setup
    run("compress", "--model", model, "--input", imgs / "0.ppm", "--output", tmp / "a.bin")
    other = tmp / "other.snic"
    C.save_model(C.CodecModel.initialize(C.CodecConfig(channels=(4, 4, 4), latent_channels=4, kernel_size=3), seed=5), other)
    assert run("decompress", "--model", other, "--input", tmp / "a.bin", "--output", tmp / "b.ppm") != 0
    assert "fingerprint" in capsys.readouterr().err


def test_missing_file_is_an_error(setup, capsys):
    tmp, model, _ = setup
    assert run("compress", "--model", model, "--input", tmp / "nope.ppm", "--output", tmp / "x") != 0
    assert "error" in capsys.readouterr().err


def test_snic_outputs(setup):
    tmp, model, imgs = setup
    assert run("snic", "--model", model, "--input", imgs / "0.ppm", "--steps", 2, "--output", tmp / "s.bin",
               "--substitute", tmp / "s.ppm", "--diff", tmp / "d.ppm", "--report", tmp / "r.csv") == 0
    meta, rows = H.read_csv(tmp / "r.csv")
    assert len(rows) == 1 and "loss" in rows[0] and "fingerprint" in meta
    assert (tmp / "s.ppm").exists() and (tmp / "d.ppm").exists()
    assert run("snic", "--model", model, "--input", imgs / "0.ppm", "--steps", 1, "--target", "rate",
               "--rate-offset", "-0.01") == 0
    assert run("snic", "--model", model, "--input", imgs / "0.ppm", "--steps", 1, "--target", "distortion",
               "--level", "30") == 0


def test_experiment_commands(setup):
    tmp, model, imgs = setup
    assert run("rd-curve", "--models", model, "--images", imgs, "--out", tmp / "rd.csv", "--steps", 1) == 0
    assert len(H.read_csv(tmp / "rd.csv")[1]) == 2 * 3 + 3
    assert run("control-range", "--model", model, "--images", imgs, "--out", tmp / "cr.csv", "--steps", 1,
               "--grid", "-0.01", "0") == 0
    assert run("precision", "--model", model, "--image", imgs / "0.ppm", "--out", tmp / "p.csv",
               "--samples", 2, "--steps", 1, "--offsets", "-0.01") == 0
    assert run("speed", "--model", model, "--images", imgs, "--out", tmp / "sp.csv", "--repeats", 1,
               "--steps-grid", 0, 1) == 0
    assert len(H.read_csv(tmp / "sp.csv")[1]) == 2


def test_train_command(setup):
    tmp, _, imgs = setup
    cfg = tmp / "train.cfg"
    cfg.write_text(f"lambda = 0.01\nsteps = 2\nbatch = 1\ncrop = 16\ndata = {imgs}\n"
                   "channels = 4,4,4\nlatent_channels = 4\nkernel_size = 3\n")
    assert run("train", "--config", cfg, "--out", tmp / "m.snic") == 0
    C.load_model(tmp / "m.snic")
    assert (tmp / "m.csv").exists()
    assert run("train", "--config", cfg, "--out", tmp / "grid", "--lambda-grid") == 0
    assert sorted(p.name for p in (tmp / "grid").glob("*.snic")) == [
        "lambda_0.001.snic", "lambda_0.01.snic", "lambda_0.1.snic", "lambda_1.snic"]
