import json
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gracias.harness.data import gen_synthetic
from gracias.model import (
    ARCHITECTURES,
    ClassifierParams,
    TrainConfig,
    accuracy,
    backprop,
    forward,
    init_params,
    load_checkpoint,
    log_softmax,
    loss,
    loss_and_input_grad,
    predict,
    save_checkpoint,
    softmax,
    train_sgd,
)
from oracles import gradient_check, scalar_forward

SHAPE = (6, 6, 2)


@pytest.fixture(params=ARCHITECTURES)
def model(request):
    return init_params(request.param, SHAPE, 4, seed=3)


def _with_bias(params, rng):
    for name, w in params.weights.items():
        if w.ndim == 1:
            params.weights[name] = 0.1 * rng.standard_normal(w.shape)
    return params


def test_zero_linear_logits_equal():
    p = init_params("linear", SHAPE, 5)
    p.weights["W"][:] = 0.0
    logits = forward(p, np.random.default_rng(0).random(SHAPE))
    assert np.all(logits == logits[0])
    assert loss(p, np.zeros(SHAPE), 2) == pytest.approx(np.log(5), abs=1e-14)


def test_linear_forward_and_grad_closed_form(rng):
    p = init_params("linear", SHAPE, 4, seed=1)
    x = rng.random(SHAPE)
    assert np.allclose(forward(p, x), p.weights["W"].T @ x.ravel(), atol=1e-14)
    _, g = loss_and_input_grad(p, x, 1)
    onehot = np.eye(4)[1]
    expected = (p.weights["W"] @ (softmax(forward(p, x)) - onehot)).reshape(SHAPE)
    assert np.allclose(g, expected, atol=1e-14)


def test_forward_matches_scalar_oracle(model, rng):
    _with_bias(model, rng)
    for _ in range(3):
        x = rng.random(SHAPE)
        assert np.max(np.abs(forward(model, x) - scalar_forward(model, x))) < 1e-12


def test_batch_matches_single(model, rng):
    xb = rng.random((5,) + SHAPE)
    single = np.stack([forward(model, x) for x in xb])
    assert np.max(np.abs(forward(model, xb) - single)) < 1e-13


def test_gradient_check_sample(model, rng):
    _with_bias(model, rng)
    for _ in range(5):
        assert gradient_check(model, rng.random(SHAPE), int(rng.integers(4)), rng) < 1e-4


def test_shape_and_label_errors(model):
    with pytest.raises(ValueError, match="shape"):
        forward(model, np.zeros((5, 5, 2)))
    with pytest.raises(ValueError, match="labels"):
        loss_and_input_grad(model, np.zeros(SHAPE), 4)
    with pytest.raises(ValueError):
        init_params("resnet", SHAPE, 4)


eighths = st.integers(-400, 400).map(lambda v: v / 8.0)  # shifts of these add exactly


@given(st.lists(eighths, min_size=2, max_size=12), eighths)
def test_softmax_properties(vals, shift):
    z = np.array(vals)
    assert abs(softmax(z).sum() - 1.0) < 1e-12
    assert np.all(-log_softmax(z) >= 0)
    assert np.argmax(z + shift) == np.argmax(z)


def test_maxpool_ties_first_occurrence():
    p = init_params("conv-small", (2, 2, 1), 2, seed=0)
    p.weights["K"][:] = 0.0
    p.weights["K"][4, :] = 1.0  # centre tap: activation equals the pixel
    p.weights["bk"][:] = 0.0
    _, g = loss_and_input_grad(p, np.full((2, 2, 1), 0.5), 0)
    assert g[0, 0, 0] != 0.0
    assert np.all(g.ravel()[1:] == 0.0)


def test_train_lr_zero_unchanged_and_deterministic():
    ds = gen_synthetic(2, 10, 8, seed=2)
    p = init_params("mlp-1-hidden", ds.images.shape[1:], 2, seed=0)
    same, _ = train_sgd(p, ds.images, ds.labels, TrainConfig(lr=0.0, epochs=2))
    assert all(np.array_equal(same.weights[k], p.weights[k]) for k in p.weights)
    a, ta = train_sgd(p, ds.images, ds.labels, TrainConfig(lr=0.05, epochs=3, seed=4))
    b, tb = train_sgd(p, ds.images, ds.labels, TrainConfig(lr=0.05, epochs=3, seed=4))
    assert all(a.weights[k].tobytes() == b.weights[k].tobytes() for k in p.weights)
    assert ta.shape == (3,) and np.array_equal(ta, tb)
    with pytest.raises(ValueError, match="empty"):
        train_sgd(p, np.zeros((0, 8, 8, 1)), np.zeros(0, dtype=int))


def test_two_class_blobs_separable():
    ds = gen_synthetic(2, 50, 16, seed=0, noise=0.1)
    p = init_params("linear", ds.images.shape[1:], 2, seed=0)
    p, _ = train_sgd(p, ds.images, ds.labels, TrainConfig(lr=0.1, epochs=20, seed=0))
    assert accuracy(p, ds.images, ds.labels) >= 0.95


def test_default_synthetic_linear_accuracy():
    ds = gen_synthetic()
    p = init_params("linear", ds.images.shape[1:], ds.class_count, seed=0)
    p, _ = train_sgd(p, ds.images, ds.labels, TrainConfig())
    assert accuracy(p, ds.images, ds.labels) >= 0.95


def test_checkpoint_round_trip(model, tmp_path, rng):
    _with_bias(model, rng)
    path = tmp_path / "m.grcm"
    save_checkpoint(path, model, seed=11)
    back, header = load_checkpoint(path)
    assert header["architecture"] == model.architecture and header["seed"] == 11
    for k in model.weights:
        assert back.weights[k].tobytes() == model.weights[k].tobytes()
    raw = path.read_bytes()
    assert raw[:4] == b"GRCM"
    (hlen,) = struct.unpack("<I", raw[4:8])
    assert json.loads(raw[8 : 8 + hlen])["input_shape"] == list(SHAPE)
    path.write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(path)


def test_param_shape_validation():
    with pytest.raises(ValueError, match="shape"):
        ClassifierParams("linear", SHAPE, 3, {"W": np.zeros((3, 3)), "b": np.zeros(3)})


def test_predict_batch(model, rng):
    xb = rng.random((4,) + SHAPE)
    assert np.array_equal(predict(model, xb), np.argmax(forward(model, xb), axis=1))
