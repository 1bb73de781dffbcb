import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ibmdn.errors import EmptyDatasetError, InvalidConfigError
from ibmdn.estimator import BicubicDegrader, BicubicUpscaler, IBMDNSuperResolver, check_images
from ibmdn.pipeline import ImageRGB
from ibmdn.synthetic import generate_image


def _images(n=2, size=40):
    return [generate_image(size, size, seed=s).to_array() for s in range(n)]


def _lr(size):
    return [np.random.default_rng(0).uniform(0, 1, (size, size, 3))]


def test_check_images_inputs(tmp_path):
    arr = (np.random.default_rng(0).uniform(0, 1, (6, 5, 3)) * 255).astype(np.uint8)
    imgs = check_images([arr, arr / 255.0, ImageRGB.from_array(arr)])
    assert all(isinstance(i, ImageRGB) and (i.height, i.width) == (6, 5) for i in imgs)
    with pytest.raises(InvalidConfigError):
        check_images(arr)
    with pytest.raises(EmptyDatasetError):
        check_images([])
    with pytest.raises(InvalidConfigError):
        check_images([np.full((4, 4, 3), np.nan)])
    with pytest.raises(InvalidConfigError):
        check_images([arr], min_size=8)


def test_degrader_shapes():
    out = BicubicDegrader(scale=4).fit().transform(_images(2, 42))
    assert [o.shape for o in out] == [(10, 10, 3)] * 2
    with pytest.raises(InvalidConfigError):
        BicubicDegrader(scale=5).fit()


def test_bicubic_upscaler():
    est = BicubicUpscaler(scale=2)
    with pytest.raises(NotFittedError):
        est.predict(_lr(10))
    est.fit()
    assert est.predict(_lr(10))[0].shape == (20, 20, 3)
    assert 0 < est.score(_images(2)) < 100


def test_params_roundtrip_and_clone():
    est = IBMDNSuperResolver(scale=3, nf=8, iters=5)
    assert est.get_params()["nf"] == 8
    twin = clone(est)
    assert twin.get_params() == est.get_params() and twin is not est


def test_super_resolver_fit_predict_score():
    est = IBMDNSuperResolver(scale=2, nf=8, nd=4, n_blocks=2, iters=3, batch=1, patch=16)
    with pytest.raises(NotFittedError):
        est.predict(_lr(10))
    est.fit(_images(2))
    assert est.n_iter_ == 3 and len(est.loss_curve_) == 3
    pred = est.predict(_lr(12))[0]
    assert pred.shape == (24, 24, 3) and pred.dtype == np.float32
    assert np.isfinite(est.score(_images(2)))


def test_super_resolver_deterministic():
    kw = dict(scale=2, nf=8, nd=4, n_blocks=2, iters=3, batch=1, patch=16, seed=1)
    a = IBMDNSuperResolver(**kw).fit(_images(2)).predict(_lr(12))[0]
    b = IBMDNSuperResolver(**kw).fit(_images(2)).predict(_lr(12))[0]
    assert a.tobytes() == b.tobytes()


def test_super_resolver_rejects_small_images():
    with pytest.raises(InvalidConfigError):
        IBMDNSuperResolver(patch=64, iters=1).fit(_images(1, 40))
