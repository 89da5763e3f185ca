import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from alipp.model import (ModelError, ModelState, PredictiveOutput, TrainingError, TrainSet, accuracy,
                         bald_from_samples, dropout_masks, evaluate, expected_calibration_error, forward_probs,
                         init_model, load_model, loss_and_grad, make_checkpoint, mean_iou, predict_mc,
                         reset_to_checkpoint, save_model, train, weight_decay_for, weights_digest,
                         window_features)
from alipp.terrain import ImageSample, Pose, Footprint


def _image(feats, labels):
    h, w = labels.shape
    return ImageSample(Pose(0, 0), feats, labels, Footprint(0, 0, h, w))


def test_weight_decay_formula():
    assert weight_decay_for(0.5, 100) == pytest.approx(0.0025, abs=1e-15)
    assert weight_decay_for(0.5, 200) == pytest.approx(0.00125, abs=1e-15)


def test_window_features_layout():
    feats = np.arange(4 * 5 * 2, dtype=float).reshape(4, 5, 2)
    x = window_features(feats, 3)
    assert x.shape == (20, 18)
    # pixel (1, 1): full 3x3 neighbourhood, row-major, D innermost
    expect = feats[0:3, 0:3].reshape(-1)
    assert np.array_equal(x[1 * 5 + 1], expect)
    # corner uses edge replication
    assert np.array_equal(x[0].reshape(3, 3, 2)[0, 0], feats[0, 0])


def test_mi_of_opposite_one_hot_samples_is_one():
    s = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    mi = bald_from_samples(s)
    assert abs(mi[0] - 1.0) <= 1e-12
    assert np.allclose(s.mean(axis=0), [[0.5, 0.5]])


def test_identical_samples_have_zero_mi():
    s = np.tile(np.array([[0.3, 0.7]]), (5, 1, 1))
    assert bald_from_samples(s)[0] == 0.0


def test_deterministic_model_has_zero_mi():
    m = init_model(3, 4, hidden=8, dropout=0.0, seed=1)
    feats = np.random.default_rng(0).random((6, 6, 3))
    out = predict_mc(m, feats, T=7, rng_seed=2)
    ref = forward_probs(m.weights, window_features(feats), None, 0.0).reshape(6, 6, 4)
    assert np.array_equal(out.probs, ref)
    assert np.all(out.mi == 0.0)
    assert np.all(out.mc_variance == 0.0)


def test_predict_mc_equals_hand_average():
    m = init_model(2, 2, hidden=6, dropout=0.5, seed=3)
    feats = np.random.default_rng(1).random((5, 4, 2))
    x = window_features(feats)
    out = predict_mc(m, feats, T=4, rng_seed=11)
    passes = np.array([forward_probs(m.weights, x, mask, m.dropout)
                       for mask in dropout_masks(m, x.shape[0], 4, 11)])
    assert np.max(np.abs(out.probs.reshape(-1, 2) - passes.mean(axis=0))) <= 1e-12
    assert np.max(np.abs(out.mi.ravel() - bald_from_samples(passes))) <= 1e-12
    assert np.max(np.abs(out.mc_variance.reshape(-1, 2) - passes.var(axis=0))) <= 1e-12


def test_predict_mc_requires_samples():
    m = init_model(2, 2, hidden=4, seed=0)
    with pytest.raises(ModelError):
        predict_mc(m, np.zeros((3, 3, 2)), T=0)


@given(seed=st.integers(0, 2 ** 32 - 1), T=st.integers(1, 12), c=st.integers(2, 5),
       p=st.sampled_from([0.0, 0.2, 0.5, 0.8]))
def test_predictive_output_invariants(seed, T, c, p):
    m = init_model(3, c, hidden=8, dropout=p, seed=seed)
    feats = np.random.default_rng(seed).normal(size=(4, 4, 3)) * 3
    out = predict_mc(m, feats, T, rng_seed=seed)
    assert np.allclose(out.probs.sum(axis=-1), 1.0, atol=1e-6)
    assert out.probs.min() >= 0 and out.probs.max() <= 1
    assert out.mi.min() >= 0 and out.mi.max() <= 1
    assert out.mc_variance.min() >= 0
    if T == 1 or p == 0.0:
        assert np.all(out.mi == 0.0)
    again = predict_mc(m, feats, T, rng_seed=seed)
    assert np.array_equal(out.probs, again.probs)


def test_miou_hand_example():
    assert mean_iou(np.array([0, 1, 1, 1]), np.array([0, 0, 1, 1]), 2) == pytest.approx(7 / 12, abs=1e-15)


def test_miou_skips_absent_classes_and_perfect_prediction():
    t = np.array([0, 0, 2, 2])
    assert mean_iou(t, t, 4) == 1.0
    assert accuracy(t, t) == 1.0


def test_ece_hand_example():
    assert expected_calibration_error(np.array([0.9, 0.9]), np.array([1, 0]), 10) == pytest.approx(0.4, abs=1e-15)


def test_ece_top_bin_includes_confidence_one():
    assert expected_calibration_error(np.array([1.0]), np.array([1]), 10) == 0.0


def test_evaluate_perfect_model_metrics():
    # two classes split by the sign of the single feature
    feats = np.where(np.arange(16).reshape(4, 4, 1) < 8, -5.0, 5.0)
    labels = (feats[..., 0] > 0).astype(int)
    m = ModelState(np.full((9, 1), 1.0), np.zeros(1), np.array([[-20.0, 20.0]]), np.zeros(2),
                   dropout=0.0, num_classes=2, input_dim=1)
    res = evaluate(m, [_image(feats, labels)], T=1)
    assert res["accuracy"] == 1.0 and res["miou"] == 1.0
    assert res["ece"] < 1e-6


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    m = init_model(2, 3, hidden=5, window=1, dropout=0.3, seed=4)
    x = rng.normal(size=(7, 2))
    y = rng.integers(0, 3, 7)
    mask = rng.random((7, 5)) >= 0.3
    weights = [w.copy() for w in m.weights]
    _, grads = loss_and_grad(weights, x, y, mask, 0.3, 0.01)
    for w, g in zip(weights, grads):
        for idx in np.ndindex(w.shape):
            old = w[idx]
            w[idx] = old + 1e-6
            lp, _ = loss_and_grad(weights, x, y, mask, 0.3, 0.01)
            w[idx] = old - 1e-6
            lm, _ = loss_and_grad(weights, x, y, mask, 0.3, 0.01)
            w[idx] = old
            num = (lp - lm) / 2e-6
            assert abs(num - g[idx]) <= 1e-6 + 1e-4 * abs(num)


def test_separable_two_class_reaches_99_percent():
    rng = np.random.default_rng(5)
    images = []
    for _ in range(6):
        lab = rng.integers(0, 2, (8, 8))
        feats = np.where(lab[..., None] == 1, 1.0, -1.0) * np.array([1.0, 0.5]) + rng.normal(0, 0.05, (8, 8, 2))
        images.append(_image(feats, lab))
    m = init_model(2, 2, hidden=8, window=1, dropout=0.0, seed=0)
    m = train(m, TrainSet(images, [i.gt_labels for i in images]), epochs=200, rng_seed=1, patience=50)
    res = evaluate(m, images, T=1)
    assert res["accuracy"] >= 0.99


def test_single_class_fit():
    rng = np.random.default_rng(2)
    images = [_image(rng.random((6, 6, 3)), np.full((6, 6), 2)) for _ in range(3)]
    m = init_model(3, 3, hidden=8, dropout=0.5, seed=0)
    m = train(m, TrainSet(images, [i.gt_labels for i in images]), epochs=100, rng_seed=0, patience=100)
    out = predict_mc(m, images[0].features, 10, rng_seed=0)
    assert np.all(out.probs.argmax(axis=-1) == 2)
    assert out.probs[..., 2].mean() > 0.95


def test_train_is_deterministic_and_pure():
    rng = np.random.default_rng(0)
    images = [_image(rng.random((5, 5, 3)), rng.integers(0, 3, (5, 5))) for _ in range(4)]
    data = TrainSet(images, [i.gt_labels for i in images])
    m = init_model(3, 3, hidden=6, seed=1)
    before = weights_digest(m.weights)
    a = train(m, data, epochs=5, rng_seed=9)
    b = train(m, data, epochs=5, rng_seed=9)
    assert weights_digest(a.weights) == weights_digest(b.weights)
    assert weights_digest(m.weights) == before


def test_train_errors():
    m = init_model(3, 3, hidden=6, seed=1)
    with pytest.raises(ModelError):
        train(m, TrainSet([], []))
    img = _image(np.ones((4, 4, 3)), np.zeros((4, 4), int))
    # each step scales the weights by about -2e30 until they overflow
    with pytest.raises(TrainingError) as info, np.errstate(all="ignore"):
        train(m, TrainSet([img], [img.gt_labels]), epochs=50, weight_decay=1.0, learning_rate=1e30, rng_seed=0)
    assert info.value.last_finite_loss is None or math.isfinite(info.value.last_finite_loss)


def test_checkpoint_reset_is_bit_exact_and_idempotent():
    rng = np.random.default_rng(0)
    images = [_image(rng.random((5, 5, 3)), rng.integers(0, 3, (5, 5))) for _ in range(3)]
    m = make_checkpoint(init_model(3, 3, hidden=6, seed=1))
    ckpt = weights_digest(m.checkpoint)
    for k in range(10):
        m = train(reset_to_checkpoint(m), TrainSet(images, [i.gt_labels for i in images]), epochs=2, rng_seed=k)
        assert weights_digest(m.checkpoint) == ckpt
    r1 = reset_to_checkpoint(m)
    r2 = reset_to_checkpoint(r1)
    assert weights_digest(r1.weights) == weights_digest(r2.weights) == ckpt


def test_model_roundtrip(tmp_path):
    m = make_checkpoint(init_model(3, 4, hidden=7, dropout=0.25, seed=2))
    m = m.with_weights([w + 0.5 for w in m.weights])
    save_model(tmp_path / "m.bin", m)
    back = load_model(tmp_path / "m.bin")
    assert weights_digest(back.weights) == weights_digest(m.weights)
    assert weights_digest(back.checkpoint) == weights_digest(m.checkpoint)
    assert (back.dropout, back.num_classes, back.input_dim, back.window) == (0.25, 4, 3, 3)
    raw = (tmp_path / "m.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(ModelError):
        load_model(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(ModelError):
        load_model(tmp_path / "short.bin")


def test_acquisition_score_is_mean_mi():
    out = PredictiveOutput(np.full((2, 2, 2), 0.5), np.array([[0.0, 1.0], [0.5, 0.5]]), np.zeros((2, 2, 2)))
    assert out.acquisition_score == 0.5
