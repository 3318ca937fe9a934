"""Bootstrap training, cloning, and handle persistence."""

import numpy as np
import pytest

from kcm import (ArchSpec, Dataset, LongTailSpec, ModelKind, Region, Sample, Split,
                 clone_model, generate_longtail, load_handle, save_handle,
                 train_supervised)


def separable_dataset(n_per_class=60, seed=0):
    """Two well-separated 2-D Gaussian blobs."""
    rng = np.random.default_rng(seed)
    samples = []
    sid = 0
    for label, center in ((0, np.array([-3.0, -3.0])), (1, np.array([3.0, 3.0]))):
        for _ in range(n_per_class):
            samples.append(Sample(
                id=sid,
                features=center + 0.3 * rng.standard_normal(2),
                label=label,
                region=Region.HEAD,
                split=Split.TRAIN,
            ))
            sid += 1
    return Dataset(samples=samples, label_names=["neg", "pos"])


def test_linearly_separable_reaches_99_percent():
    dataset = separable_dataset()
    handle = train_supervised(dataset, ArchSpec(hidden=(8,)), seed=1, epochs=200)
    X = dataset.features_of(Split.TRAIN)
    y = dataset.labels_of(Split.TRAIN)
    assert handle.accuracy(X, y) >= 0.99


def test_zero_epochs_is_chance_level():
    dataset = generate_longtail(LongTailSpec(num_classes=10, max_per_class=30,
                                             imbalance=1.0, seed=2, val_per_class=0,
                                             test_per_class=10))
    handle = train_supervised(dataset, ArchSpec(), seed=3, epochs=0)
    X = dataset.features_of(Split.TEST)
    y = dataset.labels_of(Split.TEST)
    # untrained output is noise; on balanced 10-class data that is ~10% accuracy
    assert handle.accuracy(X, y) < 0.35
    assert handle.loss_curve == []


def test_same_seed_is_bit_identical():
    dataset = separable_dataset()
    a = train_supervised(dataset, ArchSpec(hidden=(6,)), seed=9, epochs=15)
    b = train_supervised(dataset, ArchSpec(hidden=(6,)), seed=9, epochs=15)
    np.testing.assert_array_equal(a.network.parameters_flat(),
                                  b.network.parameters_flat())
    c = train_supervised(dataset, ArchSpec(hidden=(6,)), seed=10, epochs=15)
    assert not np.array_equal(a.network.parameters_flat(),
                              c.network.parameters_flat())


def test_label_out_of_range_rejected():
    dataset = separable_dataset()
    dataset.samples[0] = Sample(id=dataset.samples[0].id,
                                features=dataset.samples[0].features,
                                label=5, region=Region.HEAD, split=Split.TRAIN)
    with pytest.raises(ValueError, match="labels outside"):
        train_supervised(dataset, ArchSpec(), seed=0, epochs=1)


def test_mlp_kind_trains_through_same_interface():
    dataset = separable_dataset()
    handle = train_supervised(dataset, ArchSpec(kind=ModelKind.MLP, hidden=(8,)),
                              seed=4, epochs=200)
    X = dataset.features_of(Split.TRAIN)
    y = dataset.labels_of(Split.TRAIN)
    assert handle.accuracy(X, y) >= 0.99


def test_normalization_is_frozen_and_applied():
    dataset = separable_dataset()
    handle = train_supervised(dataset, ArchSpec(hidden=(6,)), seed=5, epochs=30)
    X = dataset.features_of(Split.TRAIN)
    Z = handle.normalize(X)
    assert Z.min() >= handle.clip_range[0] and Z.max() <= handle.clip_range[1]
    # same input, same normalization, same prediction later on
    np.testing.assert_array_equal(handle.predict_logits(X), handle.predict_logits(X))


def test_clone_is_deep_and_independent():
    dataset = separable_dataset()
    original = train_supervised(dataset, ArchSpec(hidden=(6,)), seed=6, epochs=10)
    before = original.network.parameters_flat().copy()

    clone = clone_model(original)
    X = dataset.features_of(Split.TRAIN)
    np.testing.assert_array_equal(clone.predict_logits(X), original.predict_logits(X))

    # 'train' the clone by hand and confirm the original is untouched
    clone.network.layers[0].coeff += 0.5
    clone.feature_mean += 1.0
    np.testing.assert_array_equal(original.network.parameters_flat(), before)
    grandclone = clone_model(clone)
    grandclone.network.layers[0].coeff += 0.5
    assert not np.array_equal(grandclone.network.parameters_flat(),
                              clone.network.parameters_flat())


def test_clone_matches_on_random_inputs():
    dataset = separable_dataset()
    handle = train_supervised(dataset, ArchSpec(hidden=(4,)), seed=7, epochs=10)
    clone = clone_model(handle)
    rng = np.random.default_rng(0)
    X = rng.uniform(-5, 5, size=(100, 2))
    np.testing.assert_array_equal(clone.predict_logits(X), handle.predict_logits(X))


def test_handle_round_trip(tmp_path):
    dataset = separable_dataset()
    handle = train_supervised(dataset, ArchSpec(hidden=(5,)), seed=8, epochs=10)
    path = tmp_path / "judgment.kcmnet"
    save_handle(handle, path)
    assert (tmp_path / "judgment.kcmnet.meta.json").exists()
    loaded = load_handle(path)
    assert loaded.kind == handle.kind
    assert loaded.label_count == handle.label_count
    np.testing.assert_array_equal(loaded.feature_mean, handle.feature_mean)
    np.testing.assert_array_equal(loaded.feature_scale, handle.feature_scale)
    X = dataset.features_of(Split.TRAIN)
    np.testing.assert_array_equal(loaded.predict_logits(X), handle.predict_logits(X))


def test_softmax_probabilities():
    dataset = separable_dataset()
    handle = train_supervised(dataset, ArchSpec(hidden=(4,)), seed=2, epochs=5)
    probs = handle.predict_proba(dataset.features_of(Split.TRAIN))
    assert np.all(probs >= 0)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
