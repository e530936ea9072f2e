import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fourierhaze.spectral import (
    Spectrum,
    amp_phase,
    fft2,
    fir_refine,
    fir_refine_backward,
    ifft2,
    make_mask,
    recombine,
)

from gradcheck import numeric_input_grad, relative_error

shapes = st.tuples(st.integers(1, 4), st.integers(1, 17), st.integers(1, 17))


def _image(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape).astype(np.float32)


@given(shapes, st.integers(0, 2**16))
def test_fft_roundtrip(shape, seed):
    x = _image(shape, seed)
    back, residual = ifft2(fft2(x), return_residual=True)
    assert np.max(np.abs(back - x)) <= 1e-5
    assert residual <= 1e-5


@given(shapes, st.integers(0, 2**16))
def test_parseval(shape, seed):
    x = _image(shape, seed).astype(np.float64)
    z = fft2(x).to_complex()
    e_space = np.sum(x**2)
    e_freq = np.sum(np.abs(z) ** 2)
    assert abs(e_space - e_freq) <= 1e-5 * max(e_space, 1e-12)


@given(shapes, st.integers(0, 2**16))
def test_amplitude_phase_recombine(shape, seed):
    spec = fft2(_image(shape, seed))
    amp, phase = amp_phase(spec)
    assert np.all(amp >= 0)
    assert np.all(phase > -np.pi - 1e-6) and np.all(phase <= np.pi + 1e-6)
    again = recombine(amp, phase)
    np.testing.assert_allclose(again.real, spec.real, atol=1e-5)
    np.testing.assert_allclose(again.imag, spec.imag, atol=1e-5)


def test_phase_conventions():
    spec = Spectrum(np.array([[0.0, -1.0]]), np.array([[0.0, 0.0]]))
    amp, phase = amp_phase(spec)
    assert phase[0, 0] == 0.0
    assert phase[0, 1] == pytest.approx(np.pi)


def test_fft_rejects_degenerate_input():
    with pytest.raises(ValueError):
        fft2(np.zeros(5))


@given(st.integers(1, 40), st.integers(1, 40), st.floats(0.0, 1.0))
def test_mask_cardinality(h, w, beta):
    mask = make_mask(h, w, beta)
    if beta == 0.0:
        assert mask.values.sum() == 0
        return
    bh = math.floor(beta * h + 1e-9)
    bw = math.floor(beta * w + 1e-9)
    rows = min(h, 2 * bh + 1)
    cols = min(w, 2 * bw + 1)
    assert mask.values.sum() == rows * cols
    assert mask.values[0, 0] == 1.0
    # symmetric under frequency negation
    flipped = np.roll(mask.values[::-1, ::-1], (1, 1), axis=(0, 1))
    np.testing.assert_array_equal(flipped, mask.values)


def test_mask_small_example():
    mask = make_mask(8, 8, 0.25)
    rows = mask.values[:, 0]
    assert rows.tolist() == [1, 1, 1, 0, 0, 0, 1, 1]


@pytest.mark.parametrize("beta", [-0.1, 1.5])
def test_mask_rejects_bad_beta(beta):
    with pytest.raises(ValueError, match="beta"):
        make_mask(4, 4, beta)


@given(shapes, st.integers(0, 2**16))
def test_fir_empty_mask_returns_forward_state(shape, seed):
    x_fwd = _image(shape, seed)
    x_rev = _image(shape, seed + 1)
    out = fir_refine(x_fwd, x_rev, make_mask(shape[1], shape[2], 0.0))
    assert np.max(np.abs(out - x_fwd)) <= 1e-5


@given(shapes, st.integers(0, 2**16), st.floats(0.0, 1.0))
def test_fir_equal_inputs_is_identity(shape, seed, beta):
    x = _image(shape, seed)
    out = fir_refine(x, x.copy(), make_mask(shape[1], shape[2], beta))
    assert np.max(np.abs(out - x)) <= 1e-5


def test_fir_full_mask_takes_reverse_amplitude():
    x_fwd, x_rev = _image((3, 8, 8), 0), _image((3, 8, 8), 1)
    out = fir_refine(x_fwd, x_rev, make_mask(8, 8, 1.0))
    a_out, p_out = amp_phase(fft2(out.astype(np.float64)))
    a_rev, _ = amp_phase(fft2(x_rev.astype(np.float64)))
    _, p_fwd = amp_phase(fft2(x_fwd.astype(np.float64)))
    np.testing.assert_allclose(a_out, a_rev, atol=1e-5)
    diff = np.angle(np.exp(1j * (p_out - p_fwd)))
    assert np.max(np.abs(diff)) < 1e-4


def test_fir_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    x_fwd = rng.standard_normal((2, 8, 8))
    x_rev = rng.standard_normal((2, 8, 8))
    g_out = rng.standard_normal((2, 8, 8))
    mask = make_mask(8, 8, 0.25)
    _, cache = fir_refine(x_fwd, x_rev, mask, return_cache=True)
    analytic = fir_refine_backward(cache, g_out)
    numeric = numeric_input_grad(lambda x: float(np.sum(fir_refine(x_fwd, x, mask) * g_out)), x_rev)
    assert relative_error(analytic, numeric) < 1e-6


def test_fir_shape_checks():
    mask = make_mask(4, 4, 0.5)
    with pytest.raises(ValueError, match="mismatch"):
        fir_refine(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)), mask)
    with pytest.raises(ValueError, match="mask"):
        fir_refine(np.zeros((3, 5, 5)), np.zeros((3, 5, 5)), mask)
