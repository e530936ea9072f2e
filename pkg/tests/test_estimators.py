import warnings

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fourierhaze.core import CheckpointError, save_checkpoint
from fourierhaze.estimators import FourierDiffusionDehazer, GlobalCompensator
from fourierhaze.haze import generate_dataset

TINY = dict(timesteps=20, sampling_steps=2, hidden_channels=4, embed_dim=8, transitional_iterations=3,
            phase2_iterations=2, batch_size=2, patch_size=16, crops_per_image=2, learning_rate=1e-3)


@pytest.fixture(scope="module")
def data():
    pairs, _ = generate_dataset(4, seed=0, size=24)
    return np.stack([h for _, h in pairs]), np.stack([c for c, _ in pairs])


@pytest.fixture(scope="module")
def fitted(data):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return FourierDiffusionDehazer(**TINY).fit(*data)


def test_params_roundtrip_and_clone():
    est = FourierDiffusionDehazer(**TINY)
    assert est.get_params()["patch_size"] == 16
    assert clone(est).get_params() == est.get_params()


def test_unfitted_predict_raises(data):
    with pytest.raises(NotFittedError):
        FourierDiffusionDehazer(**TINY).predict(data[0])


def test_fit_predict_shapes(fitted, data):
    assert fitted.n_iter_ == 5
    phases = [r["phase"] for r in fitted.log_]
    assert phases == [1, 1, 1, "transition", 2, 2]
    out = fitted.predict(data[0])
    assert out.shape == data[0].shape and out.min() >= 0 and out.max() <= 1
    mixed = fitted.predict([data[0][0], data[0][1][:, :20, :]])
    assert [m.shape for m in mixed] == [(3, 24, 24), (3, 20, 24)]


def test_predict_is_seeded(fitted, data):
    np.testing.assert_array_equal(fitted.predict(data[0]), fitted.predict(data[0]))
    assert not np.array_equal(fitted.predict(data[0], random_state=1), fitted.predict(data[0], random_state=2))


def test_invalid_parameters(data):
    for bad in (dict(sampling_steps=7), dict(fir_beta=2.0), dict(ema_decay=1.5)):
        with pytest.raises(ValueError):
            FourierDiffusionDehazer(**{**TINY, **bad}).fit(*data)


def test_warm_start_continues(data):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = FourierDiffusionDehazer(**{**TINY, "phase2_iterations": 0}).fit(*data)
        a.set_params(phase2_iterations=2, warm_start=True)
        a.fit(*data)
        b = FourierDiffusionDehazer(**TINY).fit(*data)
    assert a.n_iter_ == 5
    for name in b.model_.params:
        np.testing.assert_array_equal(a.model_.params[name], b.model_.params[name])


def test_save_load_roundtrip(fitted, data, tmp_path):
    fitted.save(tmp_path / "m.ckpt")
    back = FourierDiffusionDehazer.load(tmp_path / "m.ckpt")
    assert back.get_params() == fitted.get_params()
    assert back.n_iter_ == fitted.n_iter_ and back.optimizer_.step == fitted.optimizer_.step
    np.testing.assert_array_equal(back.predict(data[0]), fitted.predict(data[0]))
    assert back.set_params(stride=4).stride == 4


def test_load_rejects_wrong_kind(tmp_path):
    save_checkpoint(tmp_path / "x.ckpt", {"a": np.zeros(1)}, {"kind": "gcl"})
    with pytest.raises(ValueError, match="not a denoiser"):
        FourierDiffusionDehazer.load(tmp_path / "x.ckpt")
    (tmp_path / "y.ckpt").write_bytes(b"garbage")
    with pytest.raises(CheckpointError):
        FourierDiffusionDehazer.load(tmp_path / "y.ckpt")


def test_global_compensator(fitted, data, tmp_path):
    hazy, clean = data
    local = fitted.predict(hazy)
    gc = GlobalCompensator(channels=2, fusion_channels=4, n_iterations=3, batch_size=2).fit(hazy, clean, local)
    out = gc.predict(hazy, local)
    assert out.shape == hazy.shape and out.min() >= 0 and out.max() <= 1
    assert gc.predict_global(hazy).shape == hazy.shape
    gc.save(tmp_path / "g.ckpt", diffusion_hash="abc")
    back = GlobalCompensator.load(tmp_path / "g.ckpt")
    assert back.diffusion_config_hash_ == "abc"
    np.testing.assert_array_equal(back.predict(hazy, local), out)
    with pytest.raises(ValueError, match="one-to-one"):
        gc.fit(hazy, clean, local[:2])
