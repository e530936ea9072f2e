import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from skimage.metrics import structural_similarity

from fourierhaze.losses import (
    C1,
    gaussian_window,
    loss_l1_grad,
    loss_noise,
    loss_noise_grad,
    loss_rec,
    loss_rec_grad,
    max_scales,
    msssim_loss,
    msssim_loss_grad,
    resolve_scales,
    ssim,
)

from gradcheck import relative_error


def _pair(seed, shape=(3, 48, 48)):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, shape), rng.uniform(0, 1, shape)


def test_gaussian_window_normalised():
    g = gaussian_window()
    assert len(g) == 11 and g.sum() == pytest.approx(1.0)
    assert g[5] == g.max()


def test_noise_loss_and_grad():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 3, 4, 4))
    val, grad = loss_noise_grad(a, b)
    assert val == pytest.approx(loss_noise(b, a))
    np.testing.assert_allclose(grad, 2 * (a - b) / a.size)
    with pytest.raises(ValueError):
        loss_noise(a, b[:1])


def test_l1_grad_sign():
    val, grad = loss_l1_grad(np.array([1.0, -1.0]), np.zeros(2))
    assert val == 1.0
    np.testing.assert_allclose(grad, [0.5, -0.5])


@given(st.integers(0, 2**16))
def test_ssim_self_is_one(seed):
    x, _ = _pair(seed, (3, 16, 16))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)


@given(st.floats(0, 1), st.floats(0, 1))
def test_constant_pair_closed_form(a, b):
    x = np.full((3, 16, 16), a)
    y = np.full((3, 16, 16), b)
    expected = (2 * a * b + C1) / (a * a + b * b + C1)
    assert ssim(x, y) == pytest.approx(expected, abs=1e-6)


def test_ssim_matches_skimage_gaussian_variant():
    x, y = _pair(4, (3, 40, 40))
    ref = structural_similarity(
        x.transpose(1, 2, 0), y.transpose(1, 2, 0), channel_axis=2, data_range=1.0,
        gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
    )
    # skimage crops a border of 5 and averages; our valid filter covers the same positions
    assert ssim(x, y) == pytest.approx(ref, abs=1e-6)


@given(st.integers(0, 2**16))
def test_ssim_symmetric_and_bounded(seed):
    x, y = _pair(seed, (3, 16, 16))
    s = ssim(x, y)
    assert s == pytest.approx(ssim(y, x))
    assert -1.0 <= s <= 1.0


def test_msssim_loss_zero_for_identical():
    x, _ = _pair(1, (3, 64, 64))
    for form in ("as_written", "canonical"):
        assert msssim_loss(x, x, scales=3, form=form) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("form", ["as_written", "canonical"])
def test_msssim_gradient(form):
    x, y = _pair(2)
    _, grad = msssim_loss_grad(x, y, scales=3, form=form)
    rng = np.random.default_rng(0)
    idx = [tuple(rng.integers(0, s) for s in x.shape) for _ in range(12)] + [(0, 0, 0), (2, 47, 47)]
    h = 1e-5
    num, ana = [], []
    for i in idx:
        orig = x[i]
        x[i] = orig + h
        up = msssim_loss(x, y, 3, form=form)
        x[i] = orig - h
        down = msssim_loss(x, y, 3, form=form)
        x[i] = orig
        num.append((up - down) / (2 * h))
        ana.append(grad[i])
    assert relative_error(ana, num) < 1e-5


def test_msssim_batch_is_mean_of_images():
    x, y = _pair(3, (2, 3, 24, 24))
    batch = msssim_loss(x, y, scales=2)
    assert batch == pytest.approx(np.mean([msssim_loss(x[i], y[i], scales=2) for i in range(2)]))


def test_scale_limits():
    assert max_scales(64, 64) == 3
    assert max_scales(176, 176) == 5
    with pytest.raises(ValueError, match="at most 3"):
        resolve_scales((3, 64, 64), 5)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        assert resolve_scales((3, 64, 64), 5, auto_cap=True) == 3
    assert any("capped" in str(w.message) for w in caught)


def test_small_images_rejected():
    with pytest.raises(ValueError, match="window"):
        ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))


def test_unknown_form_rejected():
    x, y = _pair(0, (3, 16, 16))
    with pytest.raises(ValueError, match="form"):
        msssim_loss(x, y, scales=1, form="other")


def test_reconstruction_loss_combines_terms():
    x, y = _pair(5, (1, 3, 64, 64))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        val, grad = loss_rec_grad(x, y)
        assert val == pytest.approx(loss_rec(x, y))
    assert val == pytest.approx(np.mean(np.abs(x - y)) + msssim_loss(x, y, scales=3))
    assert grad.shape == x.shape
