import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from multienc.analysis import ColocatedRef, colocated_maps
from multienc.codec import PuMode
from multienc.schemes import (
    BucketModel, SplitFeatures, SplitPredictor, TrainParams, extract_split_features, load_predictor, predict_split,
    save_predictor, split_samples, stack_dataset, train_predictor,
)
from multienc.schemes.predictor import N_FEATURES, PredictorFormatError, bucket_key, feature_grid, predicted_bounds

from conftest import clip, encoded


def _feat(**kw):
    base = dict(mean=100.0, variance=50.0, ref_depth=2, ref_cost=3.0, ref_mode_class=1, qp_delta=-4, L=4.0, depth=1)
    base.update(kw)
    return SplitFeatures(**base)


def test_constant_block_has_zero_variance():
    ref = ColocatedRef(1, PuMode.Inter2Nx2N, (), 256 * 32 * 32, Fraction(1))
    f = extract_split_features(np.full((16, 16), 9), ref, 2, 1, 2)
    assert f.variance == 0 and f.mean == 9 and f.ref_cost == 1.0


def test_features_hand_computed():
    block = np.arange(16).reshape(4, 4)
    ref = ColocatedRef(3, PuMode.SkipMerge2Nx2N, (), 256 * 64 * 10, Fraction(4))
    f = extract_split_features(block, ref, -3, 4, 3)
    assert f.mean == 7.5 and f.variance == pytest.approx(np.mean((np.arange(16) - 7.5) ** 2))
    assert f.ref_cost == 10 and f.ref_mode_class == 0
    assert np.array_equal(f.vector(), extract_split_features(block, ref, -3, 4, 3).vector())


def test_feature_validation():
    with pytest.raises(ValueError):
        _feat(variance=-1.0)
    with pytest.raises(ValueError):
        _feat(mean=float("nan"))


def test_zero_model_splits_at_half():
    m = BucketModel(np.zeros(N_FEATURES), 0.0)
    assert predict_split(m, _feat()) == ("split", 0.5)


def test_saturation():
    m = BucketModel(np.zeros(N_FEATURES), 800.0)
    assert predict_split(m, _feat())[1] == pytest.approx(1.0)


@given(st.integers(0, 10**6))
def test_probability_matches_scalar_logistic(seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=N_FEATURES)
    b = float(rng.normal())
    f = _feat(mean=float(rng.uniform(0, 255)), variance=float(rng.uniform(0, 1000)), depth=int(rng.integers(0, 3)))
    z = sum(wi * xi for wi, xi in zip(w, f.vector())) + b
    p = 1 / (1 + math.exp(-z))
    assert predict_split(BucketModel(w, b), f)[1] == pytest.approx(p, abs=1e-12)


def test_model_validation():
    with pytest.raises(ValueError):
        BucketModel(np.zeros(3), 0.0)
    with pytest.raises(ValueError):
        BucketModel(np.zeros(N_FEATURES), 0.0, threshold=1.0)


def test_separable_set_trains_to_full_accuracy():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (400, N_FEATURES))
    y = (X[:, 0] + X[:, 1] > 0).astype(float)
    m = train_predictor({(0, 5, 1, 1): (X, y)}, TrainParams(epochs=2000, learning_rate=4.0)).buckets[(0, 5, 1, 1)]
    assert np.mean((m.probability(X) >= 0.5) == (y == 1)) >= 0.99
    assert m.accuracy >= 0.95


def test_random_labels_do_not_beat_majority():
    rng = np.random.default_rng(1)
    X = rng.uniform(-1, 1, (3000, N_FEATURES))
    y = (rng.uniform(size=3000) < 0.7).astype(float)
    model = train_predictor({(0, 5, 1, 1): (X, y)})
    m = model.rejected[(0, 5, 1, 1)]
    assert abs(m.accuracy - m.baseline) < 0.05
    # no held-out gain: the bucket is left out, so encodes keep the full range
    assert model.model((0, 5, 1, 1)) is None


def test_training_is_deterministic_and_single_class_warns():
    rng = np.random.default_rng(2)
    X = rng.uniform(size=(50, N_FEATURES))
    y = (X[:, 2] > 0.5).astype(float)
    a = train_predictor({(1, 5, 1, 2): (X, y)})
    b = train_predictor({(1, 5, 1, 2): (X.copy(), y.copy())})
    assert np.array_equal(a.buckets[(1, 5, 1, 2)].weights, b.buckets[(1, 5, 1, 2)].weights)
    with pytest.warns(UserWarning):
        c = train_predictor({(0, 1, 1, 1): (X, np.ones(50))})
    assert c.rejected[(0, 1, 1, 1)].probability(X).min() > 0.99
    assert not c.buckets


def test_spm_roundtrip_and_errors():
    rng = np.random.default_rng(3)
    model = SplitPredictor({(d, 5, 1, 2): BucketModel(rng.normal(size=N_FEATURES), float(d), 0.4) for d in range(3)})
    back = load_predictor(save_predictor(model))
    assert back.buckets.keys() == model.buckets.keys()
    for k, m in model.buckets.items():
        assert np.array_equal(back.buckets[k].weights, m.weights)
        assert back.buckets[k].bias == m.bias and back.buckets[k].threshold == m.threshold
    data = save_predictor(model)
    assert data[:4] == b"SPM1"
    for bad in (b"XXXX" + data[4:], data[:-3], data[:5]):
        with pytest.raises(PredictorFormatError):
            load_predictor(bad)


def test_split_samples_labels_follow_standalone_depths():
    tgt, ref = encoded(qp=30).analysis, encoded(qp=38).analysis
    s = clip()
    ds = stack_dataset(split_samples(s.luma_stack(), tgt, ref))
    X, y = ds[bucket_key(0, 30, tgt.resolution.index, tgt.resolution.index)]
    depth8 = np.stack([fa.maps[0] for fa in tgt.frames])
    # every 64x64 CU inside the frame is a depth-0 sample, split iff its depth exceeds 0
    expect = depth8[:, ::8, ::8].reshape(-1) > 0
    assert np.array_equal(y == 1, expect)
    assert X.shape[1] == N_FEATURES


@given(st.integers(0, 10**6), st.floats(0.05, 0.95))
def test_predicted_bounds_are_nested_and_valid(seed, thr):
    rng = np.random.default_rng(seed)
    a = encoded().analysis
    maps = colocated_maps(a.frames[1], 128, 64)
    model = SplitPredictor({bucket_key(d, 32, 1, 1): BucketModel(rng.normal(size=N_FEATURES), float(rng.normal()), thr)
                            for d in range(3)})
    lo, hi = predicted_bounds(model, clip().frames[1].y, maps, 32, 32, 1, 1)
    assert np.all(lo <= hi) and lo.min() >= 0 and hi.max() <= 3


def test_feature_grid_shape():
    a = encoded().analysis
    X, rows, cols = feature_grid(clip().frames[1].y, colocated_maps(a.frames[1], 128, 64), 0, 1, 1)
    assert X.shape == (8, N_FEATURES) and rows.max() == 1 and cols.max() == 3
