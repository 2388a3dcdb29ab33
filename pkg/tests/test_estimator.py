import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from gioada.core import ConfigError
from gioada.data import ToyShift, ToyWorldConfig, generate_toy
from gioada.estimator import GIOAdaSegmenter, check_depth_maps, check_images, check_label_maps

SMALL = {"model.tiny_width": 8, "model.transform_width": 4, "model.transform_blocks": 1, "model.disc_width": 8}


@pytest.fixture(scope="module")
def arrays():
    tw = ToyWorldConfig(seed=0, n_scenes=4, image_size=(16, 24), shift=ToyShift(0.15, 0.04, -0.1))
    src, tgt = generate_toy(tw, "source"), generate_toy(tw, "target")
    return (np.stack([s.image for s in src]), np.stack([s.labels for s in src]), np.stack([s.depth for s in src]),
            np.stack([t.image for t in tgt]), np.stack([t.labels for t in tgt]))


def test_get_set_params_and_clone():
    est = GIOAdaSegmenter(variant="joint", lambda_output=0.01, config=SMALL)
    params = est.get_params()
    assert params["variant"] == "joint" and params["lambda_output"] == 0.01
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(max_steps=5)
    assert est.max_steps == 5


def test_check_images():
    u8 = np.zeros((2, 4, 4, 3), np.uint8)
    assert check_images(u8).min() == -1.0
    assert check_images(np.zeros((4, 4, 3))).shape == (1, 4, 4, 3)
    with pytest.raises(ValueError, match="shape"):
        check_images(np.zeros((2, 4, 4)))
    with pytest.raises(ValueError, match=r"\[-1, 1\]"):
        check_images(np.full((1, 2, 2, 3), 5.0))
    with pytest.raises(ValueError):
        check_images(np.full((1, 2, 2, 3), np.nan))


def test_check_label_and_depth_maps():
    y = check_label_maps(np.array([[0, 255], [3, 1]]), 4, (1, 2, 2))
    assert y.dtype == np.int64
    with pytest.raises(ValueError, match=r"\[4\]"):
        check_label_maps(np.array([[4]]), 4, (1, 1, 1))
    with pytest.raises(ValueError, match="shape"):
        check_label_maps(np.zeros((1, 3, 3), int), 4, (1, 2, 2))
    with pytest.raises(ValueError, match="integer"):
        check_label_maps(np.full((1, 1, 1), 0.5), 4, (1, 1, 1))
    with pytest.raises(ValueError, match="non-negative"):
        check_depth_maps(np.full((1, 1, 1), -1.0), (1, 1, 1))


def test_unfitted_raises(arrays):
    with pytest.raises(NotFittedError):
        GIOAdaSegmenter().predict(arrays[0])


def test_fit_argument_validation(arrays):
    X, y, depth, Xt, _ = arrays
    with pytest.raises(ValueError, match="X_target"):
        GIOAdaSegmenter(variant="joint", max_steps=1, config=SMALL).fit(X, y, depth)
    with pytest.raises(ValueError, match="depth="):
        GIOAdaSegmenter(variant="+sd", max_steps=1, config=SMALL).fit(X, y, X_target=Xt)
    with pytest.raises(ConfigError):
        GIOAdaSegmenter(classes="coco", max_steps=1).fit(X, y, depth, Xt)
    with pytest.raises(ConfigError):
        GIOAdaSegmenter(max_steps=1, config={"model.nope": 1}).fit(X, y, depth, Xt)


def test_baseline_fit_without_target(arrays):
    X, y, depth, _, _ = arrays
    est = GIOAdaSegmenter(variant="na", max_steps=3, config=SMALL).fit(X, y)
    assert est.n_steps_ == 3 and len(est.history_) == 3
    assert est.predict(X).shape == y.shape


def test_full_fit_predict_transform_score(arrays):
    X, y, depth, Xt, yt = arrays
    est = GIOAdaSegmenter(max_steps=4, config=SMALL, random_state=1).fit(X, y, depth, Xt)
    labels = est.predict(Xt)
    assert labels.shape == yt.shape and set(np.unique(labels)) <= set(est.classes_)
    d = est.predict_depth(Xt)
    assert d.shape == yt.shape and d.min() >= 0 and d.max() <= 100
    out = est.transform(X, y, depth)
    assert out.shape == X.shape and np.abs(out).max() <= 1
    with pytest.raises(ValueError, match="y="):
        est.transform(X)
    s = est.score(Xt, yt)
    assert 0.0 <= s <= 1.0
    assert est.class_names_ == ["sky", "road", "building", "obstacle"]


def test_score_is_one_on_perfect_predictions(arrays, monkeypatch):
    X, y, depth, _, _ = arrays
    est = GIOAdaSegmenter(variant="na", max_steps=1, config=SMALL).fit(X, y)
    monkeypatch.setattr(est, "predict", lambda _X: y)
    assert est.score(X, y) == 1.0


def test_fit_is_reproducible(arrays):
    X, y, depth, Xt, _ = arrays
    a = GIOAdaSegmenter(variant="joint", max_steps=3, config=SMALL).fit(X, y, depth, Xt)
    b = GIOAdaSegmenter(variant="joint", max_steps=3, config=SMALL).fit(X, y, depth, Xt)
    assert a.history_ == b.history_


def test_target_domain_never_supervised(arrays):
    X, y, depth, Xt, _ = arrays
    seen = []
    GIOAdaSegmenter(variant="joint", max_steps=2, config={**SMALL, "train.hygiene_every": 1}).fit(
        X, y, depth, Xt, callback=lambda step, rep, tr: seen.append(tr.hygiene_checks))
    assert seen == [1, 2]
