import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from srseg.estimator import SuperResSegmenter
from srseg.training import HR_BASELINE, LR_BASELINE

from conftest import make_structured_sample


def region_pair(rng, n=2, tile=32):
    """(X, y) lists of color-coded three-region scenes."""
    X, y = [], []
    for i in range(n):
        s = make_structured_sample(rng, tile=tile, factor=4, source_id=f"s{i}")
        X.append(s.hr)
        y.append(s.labels)
    return X, y


def test_get_params_round_trip_and_clone():
    est = SuperResSegmenter(factor=8, alpha=0.5, seed=3)
    params = est.get_params()
    assert params["factor"] == 8 and params["alpha"] == 0.5
    dup = clone(est)
    assert dup.get_params() == params
    est.set_params(epochs=9)
    assert est.epochs == 9 and dup.epochs != 9


def test_unfitted_raises(rng):
    est = SuperResSegmenter()
    X, _ = region_pair(rng)
    for call in (est.predict, est.predict_proba, est.transform):
        with pytest.raises(NotFittedError):
            call(X)


def test_fit_validates_inputs(rng):
    X, y = region_pair(rng)
    with pytest.raises(ValueError):
        SuperResSegmenter(epochs=2).fit(X, y[:1])
    with pytest.raises(ValueError):
        SuperResSegmenter(epochs=2).fit([X[0][..., 0]], y[:1])
    with pytest.raises(ValueError):
        SuperResSegmenter(epochs=2).fit(X[:1], [y[0][:16]])


def _fast(mode=HR_BASELINE, **kw):
    kw.setdefault("epochs", 2)
    kw.setdefault("encoder_plan", ((1, 4), (1, 4)))
    kw.setdefault("sr_stages", 1)
    kw.setdefault("sr_feat0", 8)
    kw.setdefault("sr_nr", 4)
    return SuperResSegmenter(mode=mode, **kw)


def test_fit_shapes_and_attrs(rng):
    X, y = region_pair(rng)
    est = _fast(HR_BASELINE).fit(X, y)
    assert est.n_classes_ == 3
    assert est.sr_net_ is None
    assert len(est.history_) == 2
    preds = est.predict(X)
    assert preds[0].shape == y[0].shape
    assert preds[0].dtype == np.int64
    proba = est.predict_proba(X[:1])[0]
    assert proba.shape == (3,) + y[0].shape
    np.testing.assert_allclose(proba.sum(axis=0), 1.0, atol=1e-5)
    assert 0.0 <= est.score(X, y) <= 1.0


def test_lr_baseline_upsamples_input(rng):
    X, y = region_pair(rng, tile=32)
    est = _fast(LR_BASELINE).fit(X, y)
    lr = np.asarray(
        np.clip(np.round(_downscale(X[0])), 0, 255), dtype=np.float64)
    out = est.transform([lr])[0]
    assert out.shape == X[0].shape
    pred = est.predict([lr])[0]
    assert pred.shape == y[0].shape


def _downscale(img):
    from srseg.data import DegradationSpec
    from srseg.resample import bicubic_downsample
    return bicubic_downsample(img, DegradationSpec(4))


def test_end2end_transform_is_sr_output(rng):
    X, y = region_pair(rng, tile=32)
    est = _fast("end2end").fit(X, y)
    assert est.sr_net_ is not None
    lr = np.asarray(
        np.clip(np.round(_downscale(X[0])), 0, 255), dtype=np.float64)
    out = est.transform([lr])[0]
    assert out.shape == X[0].shape
    assert out.min() >= 0.0 and out.max() <= 255.0


def test_num_classes_inferred_vs_given(rng):
    X, y = region_pair(rng)
    assert _fast().fit(X, y).n_classes_ == 3
    assert _fast(num_classes=5).fit(X, y).n_classes_ == 5


def test_hr_baseline_learns_regions(rng):
    X, y = region_pair(rng, n=2, tile=32)
    est = _fast(HR_BASELINE, epochs=30, base_lr=3e-3,
                encoder_plan=((2, 8), (2, 16))).fit(X, y)
    assert est.score(X, y) >= 0.9
