import math

import numpy as np
import pytest
from scipy import ndimage
from skimage.metrics import structural_similarity

from snic import metrics as M
from snic import tensor as T
from conftest import check_grad

WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])


def _valid_blur(img, g):
    r = len(g) // 2
    out = ndimage.correlate1d(img, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    return out[r:-r, r:-r]


def ms_ssim_reference(a, b, scales):
    """Per-channel loop over 2-D planes using scipy filters."""
    x = np.arange(11) - 5.0
    g = np.exp(-x ** 2 / (2 * 1.5 ** 2))
    g /= g.sum()
    w = WEIGHTS[:scales] / WEIGHTS[:scales].sum()
    vals = []
    for c in range(a.shape[1]):
        p, q = a[0, c], b[0, c]
        total = 1.0
        for s in range(scales):
            mp, mq = _valid_blur(p, g), _valid_blur(q, g)
            vp = _valid_blur(p * p, g) - mp ** 2
            vq = _valid_blur(q * q, g) - mq ** 2
            cov = _valid_blur(p * q, g) - mp * mq
            cs = (2 * cov + 9e-4) / (vp + vq + 9e-4)
            if s == scales - 1:
                lum = (2 * mp * mq + 1e-4) / (mp ** 2 + mq ** 2 + 1e-4)
                total *= max(float(np.mean(lum * cs)), 0.0) ** w[s]
            else:
                total *= max(float(np.mean(cs)), 0.0) ** w[s]
                h, wd = p.shape[0] // 2 * 2, p.shape[1] // 2 * 2
                p = p[:h, :wd].reshape(h // 2, 2, wd // 2, 2).mean(axis=(1, 3))
                q = q[:h, :wd].reshape(h // 2, 2, wd // 2, 2).mean(axis=(1, 3))
        vals.append(total)
    return float(np.mean(vals))


@pytest.fixture
def pair(rng):
    a = rng.uniform(size=(1, 3, 64, 64))
    a = ndimage.uniform_filter(a, size=(1, 1, 5, 5))
    b = np.clip(a + rng.normal(scale=0.05, size=a.shape), 0, 1)
    return a, b


def test_mse_psnr_hand_example():
    a = np.zeros((1, 1, 2, 2))
    b = np.full((1, 1, 2, 2), 0.1)
    assert np.isclose(float(M.mse(a, b).data), 0.01)
    assert np.isclose(M.psnr(a, b), 20.0)
    assert M.psnr(a, a) == math.inf
    assert M.display_psnr(math.inf) == 100.0
    assert M.mean_psnr([30.0, math.inf, 32.0]) == 31.0


def test_ms_ssim_matches_reference(pair):
    a, b = pair
    assert M.max_scales(64, 64) == 3
    for s in (1, 2, 3):
        got = float(M.ms_ssim(a, b, scales=s).data)
        assert got == pytest.approx(ms_ssim_reference(a, b, s), abs=1e-10)


def test_single_scale_matches_skimage(pair):
    a, b = pair
    ref = structural_similarity(a[0], b[0], channel_axis=0, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False, data_range=1.0)
    assert float(M.ms_ssim(a, b, scales=1).data) == pytest.approx(ref, abs=1e-7)


def test_ms_ssim_properties(pair):
    a, b = pair
    assert float(M.ms_ssim(a, a).data) == pytest.approx(1.0)
    assert float(M.ms_ssim(a, b).data) == pytest.approx(float(M.ms_ssim(b, a).data), abs=1e-12)
    assert float(M.ms_ssim(a, b).data) < 1.0


def test_ms_ssim_scale_errors():
    x = np.zeros((1, 3, 16, 16))
    with pytest.raises(ValueError, match="scales"):
        M.ms_ssim(x, x, scales=3)
    with pytest.raises(ValueError, match="shape"):
        M.ms_ssim(x, np.zeros((1, 3, 16, 17)))


def test_ms_ssim_gradient(rng):
    a = rng.uniform(0.2, 0.8, size=(1, 1, 22, 22))
    b = rng.uniform(0.2, 0.8, size=a.shape)
    assert check_grad(lambda p: M.ms_ssim(p, T.Tensor(b)), a) <= 1e-3


def test_distortion_forms(pair):
    a, b = pair
    assert float(M.distortion(a, b, "psnr").data) == pytest.approx(255 ** 2 * np.mean((a - b) ** 2))
    assert float(M.distortion(a, b, "ms-ssim").data) == pytest.approx(1 - float(M.ms_ssim(a, b).data))
    # 30 dB -> MSE 1e-3 on [0,1]
    assert M.distortion_level(30.0, "psnr") == pytest.approx(255 ** 2 * 1e-3)
    assert M.distortion_level(0.95, "ms-ssim") == pytest.approx(0.05)
    assert M.MetricKind.parse("MS_SSIM") is M.MetricKind.MS_SSIM


def test_metric_examples(rng):
    a = np.zeros((1, 3, 4, 4))
    assert float(M.mse(a, a).data) == 0.0
    assert float(M.mse(a, a + 0.5).data) == 0.25
    assert M.psnr_from_mse(0.01) == pytest.approx(20.0)
    assert M.psnr_from_mse(1e-4) == pytest.approx(40.0)
    errs = np.sort(rng.uniform(1e-5, 1.0, 20))
    vals = [M.psnr_from_mse(e) for e in errs]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_mse_gradient(rng):
    a, b = rng.uniform(size=(1, 3, 4, 4)), rng.uniform(size=(1, 3, 4, 4))
    assert check_grad(lambda p: M.mse(p, T.Tensor(b)), a) <= 1e-4


def test_ms_ssim_ordering(rng):
    a = (rng.uniform(size=(1, 3, 64, 64)) > 0.5).astype(float)
    a = ndimage.uniform_filter(a, size=(1, 1, 3, 3))
    noisy = np.clip(a + rng.uniform(0, 0.01, a.shape), 0, 1)
    assert float(M.ms_ssim(a, 1 - a).data) < float(M.ms_ssim(a, noisy).data) - 0.5


def test_ms_ssim_five_pairs_against_reference(rng):
    for _ in range(5):
        a = ndimage.uniform_filter(rng.uniform(size=(1, 3, 48, 48)), size=(1, 1, 3, 3))
        b = np.clip(a + rng.normal(scale=rng.uniform(0.01, 0.2), size=a.shape), 0, 1)
        assert float(M.ms_ssim(a, b).data) == pytest.approx(ms_ssim_reference(a, b, 3), abs=1e-4)
    assert M.MetricKind.PSNR.higher_is_better and not M.MetricKind.MSE.higher_is_better
