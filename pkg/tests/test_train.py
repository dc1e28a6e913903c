import numpy as np
import pytest

from snic import codec as C
from snic import imageio
from snic import train as TR


def test_adam_hand_example():
    # first step: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps)
    p = {"w": np.array([1.0, -2.0, 0.5])}
    opt = TR.Adam(lr=0.1)
    opt.step(p, {"w": np.array([4.0, -0.25, 0.0])})
    np.testing.assert_allclose(p["w"], [1.0 - 0.1 * 4 / (4 + 1e-8), -2.0 + 0.1 * 0.25 / (0.25 + 1e-8), 0.5])


def test_adam_second_step_oracle():
    g1, g2, lr = 2.0, -1.0, 0.01
    m = 0.1 * g1
    v = 0.001 * g1 ** 2
    m = 0.9 * m + 0.1 * g2
    v = 0.999 * v + 0.001 * g2 ** 2
    expected = -lr * g1 / (abs(g1) + 1e-8) - lr * (m / (1 - 0.9 ** 2)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    p = {"w": np.zeros(1)}
    opt = TR.Adam(lr)
    opt.step(p, {"w": np.array([g1])})
    opt.step(p, {"w": np.array([g2])})
    assert p["w"][0] == pytest.approx(expected, rel=1e-12)


def test_parse_config():
    cfg = TR.parse_config_text("""
        # comment
        lambda = 0.1
        steps=12
        learning_rate = 5e-4
        channels = 8, 8, 8
        latent_channels = 8
        data = /tmp/x
    """)
    assert (cfg.lam, cfg.steps, cfg.lr, cfg.channels, cfg.dataset) == (0.1, 12, 5e-4, (8, 8, 8), "/tmp/x")
    with pytest.raises(ValueError, match="unknown key"):
        TR.parse_config_text("bogus = 1")
    with pytest.raises(ValueError, match="key=value"):
        TR.parse_config_text("lambda 1")
    with pytest.raises(ValueError):
        TR.parse_config_text("lambda = -1")
    with pytest.raises(ValueError, match="crop"):
        TR.parse_config_text("crop = 40")


@pytest.fixture
def corpus(tmp_path, rng):
    for i in range(3):
        imageio.write_ppm(tmp_path / f"{i}.ppm", rng.integers(0, 256, (40, 50, 3), dtype=np.uint8))
    return tmp_path


def _cfg(corpus, **kw):
    base = dict(lam=0.01, steps=2, batch=2, crop=16, dataset=str(corpus), channels=(4, 4, 4),
                latent_channels=4, kernel_size=3, log_every=1)
    return TR.TrainConfig(**{**base, **kw})


def test_training_is_deterministic(corpus):
    a = TR.train(_cfg(corpus))
    b = TR.train(_cfg(corpus))
    assert a.model.fingerprint == b.model.fingerprint
    assert a.curve == b.curve
    assert len(a.curve) == 2
    c = TR.train(_cfg(corpus, seed=1))
    assert c.model.fingerprint != a.model.fingerprint


def test_lr_decay_step(corpus):
    # decaying to the same rate is a no-op; decaying to zero freezes the model after that step
    plain = TR.train(_cfg(corpus, steps=3))
    same = TR.train(_cfg(corpus, steps=3, lr_decay_step=1, lr_final=1e-3))
    assert same.model.fingerprint == plain.model.fingerprint
    frozen = TR.train(_cfg(corpus, steps=3, lr_decay_step=1, lr_final=0.0))
    one = TR.train(_cfg(corpus, steps=1))
    assert frozen.model.fingerprint == one.model.fingerprint
    assert TR.parse_config_text("lr_decay_step = 10\nlr_final = 1e-5").lr_decay_step == 10


def test_warm_start(corpus, tmp_path):
    first = TR.train(_cfg(corpus, steps=2))
    C.save_model(first.model, tmp_path / "a.snic")
    resumed = TR.train(_cfg(corpus, steps=0, init=str(tmp_path / "a.snic")))
    assert resumed.model.fingerprint == first.model.fingerprint
    with pytest.raises(ValueError, match="architecture"):
        TR.train(_cfg(corpus, steps=1, latent_channels=5, init=str(tmp_path / "a.snic")))


def test_training_reduces_loss(corpus):
    res = TR.train(_cfg(corpus, steps=40, lr=3e-3))
    assert res.final_val_loss < res.initial_val_loss


def test_zero_lambda_loss_is_bpp(rng):
    m = C.CodecModel.initialize(C.CodecConfig(channels=(4, 4, 4), latent_channels=4))
    batch = rng.uniform(size=(2, 3, 16, 16)).astype(np.float32)
    loss, bpp, _ = TR.training_loss(m, batch, 0.0, np.random.default_rng(0))
    assert float(loss.data) == float(bpp.data)


def test_training_loss_matches_manual(rng):
    m = C.CodecModel.initialize(C.CodecConfig(channels=(4, 4, 4), latent_channels=4), dtype=np.float64)
    batch = rng.uniform(size=(2, 3, 16, 16))
    loss, bpp, mse255 = TR.training_loss(m, batch, 0.5, np.random.default_rng(0))
    x_t, bits = C.surrogate_pass(m, batch, np.random.default_rng(0))
    assert float(bpp.data) == pytest.approx(float(bits.data) / (2 * 16 * 16))
    assert float(mse255.data) == pytest.approx(255 ** 2 * np.mean((x_t.data - batch) ** 2))
    assert float(loss.data) == pytest.approx(0.5 * float(mse255.data) + float(bpp.data))


def test_sampler_rejects_small_corpus(rng):
    with pytest.raises(ValueError):
        TR.PatchSampler([np.zeros((8, 8, 3), np.uint8)], 16, rng)


def test_adam_zero_gradient_is_noop():
    p = {"w": np.array([0.3, -0.7])}
    opt = TR.Adam(lr=0.1)
    for _ in range(3):
        opt.step(p, {"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"], [0.3, -0.7])


def test_adam_constant_gradient_step_is_lr():
    p = {"w": np.zeros(1)}
    opt = TR.Adam(lr=0.01)
    prev = 0.0
    for _ in range(50):
        opt.step(p, {"w": np.array([3.7])})
        step, prev = prev - p["w"][0], p["w"][0]
        assert step == pytest.approx(0.01, rel=1e-6)


def test_adam_scalar_quadratic():
    p = {"w": np.array([4.0])}
    opt = TR.Adam(lr=0.05)
    for _ in range(500):
        opt.step(p, {"w": 2.0 * (p["w"] - 1.5)})
    assert abs(p["w"][0] - 1.5) < 1e-3
