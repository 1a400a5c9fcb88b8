"""Python-side smoke tests over the compiled core."""

import math

import pytest

import fairvit


TINY_MODEL = {
    "variant": "fair_hybrid",
    "image_size": 16,
    "patch": 8,
    "cnn_channels": [4, 8],
    "d_vit": 8,
    "heads": 2,
    "vit_depth": 1,
    "head_hidden": 16,
    "dropout": 0.0,
}
TINY_TRAIN = {"lr": 1e-3, "batch": 8, "epochs": 1, "lambda": 0.5, "seed": 3}


def make_splits(n=40, offset=0.5, seed=7):
    ds = fairvit.generate(n=n, image_size=16, group_offset=offset, seed=seed)
    return fairvit.split(ds, seed=seed)


def test_generate_is_deterministic_and_balanced():
    a = fairvit.generate(n=21, image_size=16, seed=5)
    b = fairvit.generate(n=21, image_size=16, seed=5)
    assert a.ids() == b.ids()
    assert a.scores() == b.scores()
    attrs = a.attrs()
    assert abs(attrs.count(0) - attrs.count(1)) <= 1
    img = a.image(0)
    assert img.shape == (3, 16, 16)
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_split_sizes():
    train, val, test = make_splits(n=40)
    assert (len(train), len(val), len(test)) == (24, 8, 8)


def test_train_eval_roundtrip(tmp_path):
    train, val, test = make_splits()
    model = fairvit.train(train, val, TINY_MODEL, TINY_TRAIN)
    assert len(model.logs()) == 1

    metrics = model.evaluate(test, probe_epochs=40)
    for key in ("pc", "mae", "rmse", "performance_gap", "probe_accuracy"):
        assert key in metrics
    assert len(metrics["predictions"]) == len(test)

    path = str(tmp_path / "model.ckpt")
    model.save(path)
    again = fairvit.load(path).evaluate(test, probe_epochs=40)
    assert again["predictions"] == metrics["predictions"]


def test_explainers_shapes():
    train, val, test = make_splits()
    model = fairvit.train(train, val, TINY_MODEL, TINY_TRAIN)
    cam = model.grad_cam(test, 0)
    rollout = model.attention_rollout(test, 0)
    assert cam.shape == (16, 16)
    assert rollout.shape == (16, 16)
    assert cam.min() >= 0.0 and cam.max() <= 1.0


def test_metric_primitives():
    assert fairvit.pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(0.9819805060619659)
    assert fairvit.mae([1, 3], [1, 1]) == pytest.approx(1.0)
    assert fairvit.rmse([1, 3], [1, 1]) == pytest.approx(math.sqrt(2.0))
    gm, gap = fairvit.performance_gap([1.222, 1.257], [1.0, 1.0], [0, 1])
    assert gap == pytest.approx(0.035)
    assert fairvit.bias_reduction(0.035, 0.006) == pytest.approx(82.857142857, rel=1e-9)


def test_grl_gradient_is_exact():
    for lam in (0.0, 0.5, 2.0):
        assert fairvit.grl_gradient_check(lam)


def test_validation_errors_surface_as_python_exceptions():
    with pytest.raises(Exception):
        fairvit.generate(n=0)
