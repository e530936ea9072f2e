import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st
from skimage.color import rgb2lab

from fourierhaze.metrics import MetricsReport, ciede2000, delta_e_2000, psnr, sam, srgb_to_lab, ssim

from ciede_vectors import SHARMA_PAIRS


def _img(seed, shape=(3, 16, 16)):
    return np.random.default_rng(seed).uniform(0, 1, shape)


def test_psnr_uniform_offset_and_cap():
    x = np.full((3, 8, 8), 0.2)
    assert psnr(x + 0.1, x) == pytest.approx(20.0, abs=1e-6)
    assert psnr(x, x) == 100.0


def test_psnr_matches_direct_formula():
    x, y = _img(0), _img(1)
    assert psnr(x, y) == pytest.approx(10 * np.log10(1 / np.mean((x - y) ** 2)))


def test_psnr_decreases_with_noise_amplitude():
    x = np.full((3, 16, 16), 0.5)
    noise = np.random.default_rng(0).uniform(-1, 1, x.shape)
    values = [psnr(np.clip(x + a * noise, 0, 1), x) for a in (0.01, 0.05, 0.1, 0.3)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_ssim_identity():
    x = _img(2)
    assert ssim(x, x) == pytest.approx(1.0)


@pytest.mark.parametrize("lab1,lab2,expected", SHARMA_PAIRS)
def test_ciede2000_reference_vectors(lab1, lab2, expected):
    assert float(delta_e_2000(np.array(lab1), np.array(lab2))) == pytest.approx(expected, abs=1e-4)
    assert float(delta_e_2000(np.array(lab2), np.array(lab1))) == pytest.approx(expected, abs=1e-4)


def test_ciede2000_identity_and_symmetry():
    x, y = _img(3), _img(4)
    assert ciede2000(x, x) == 0.0
    assert ciede2000(x, y) == pytest.approx(ciede2000(y, x))


def test_srgb_to_lab_against_skimage():
    x = _img(5, (3, 6, 6))
    ref = rgb2lab(x.transpose(1, 2, 0)).transpose(2, 0, 1)
    np.testing.assert_allclose(srgb_to_lab(x), ref, atol=1e-2)
    white = srgb_to_lab(np.ones((3, 1, 1)))
    assert white[0, 0, 0] == pytest.approx(100.0, abs=1e-3)
    assert abs(white[1, 0, 0]) < 1e-2 and abs(white[2, 0, 0]) < 1e-2


def _per_pixel(vec, shape=(4, 4)):
    return np.broadcast_to(np.asarray(vec, float)[:, None, None], (3,) + shape).copy()


def test_sam_reference_cases():
    a = _per_pixel([1, 0, 0])
    assert sam(a, a) == pytest.approx(0.0, abs=1e-6)
    assert sam(a, _per_pixel([0, 1, 0])) == pytest.approx(np.pi / 2, abs=1e-6)
    assert sam(_per_pixel([1, 1, 0]), a) == pytest.approx(np.pi / 4, abs=1e-6)


@given(st.floats(0.01, 100.0))
def test_sam_scale_invariant(c):
    x = _img(6) + 0.01
    assert sam(x, c * x) == pytest.approx(0.0, abs=1e-6)


def test_sam_excludes_zero_vectors():
    x = _img(7)
    y = x.copy()
    y[:, 0, :3] = 0.0
    angle, excluded = sam(x, y, return_excluded=True)
    assert excluded == 3 and angle == pytest.approx(0.0, abs=1e-6)
    with pytest.raises(ValueError, match="undefined"):
        sam(np.zeros((3, 2, 2)), x[:, :2, :2])


def test_metrics_reject_mismatched_shapes():
    with pytest.raises(ValueError, match="shape"):
        psnr(_img(0), _img(1, (3, 16, 15)))


def test_report_csv(tmp_path):
    report = MetricsReport()
    report.add("a.png", _img(0), _img(1))
    report.add("b.png", _img(2), _img(2))
    report.write_csv(tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["image_id", "psnr_db", "ssim", "ciede2000", "sam_rad"]
    assert [r[0] for r in rows[1:]] == ["a.png", "b.png", "mean"]
    assert float(rows[2][1]) == 100.0
    assert float(rows[3][1]) == pytest.approx(report.mean()["psnr_db"], abs=1e-5)
