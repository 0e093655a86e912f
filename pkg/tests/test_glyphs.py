"""Synthetic glyph dataset: determinism, balance, and the on-disk format."""

import numpy as np
import pytest

from awtlab.errors import FormatError, ShapeError
from awtlab.glyphs import (
    CLASS_NAMES,
    Dataset,
    N_CLASSES,
    gen_glyphs,
    load_dataset,
    save_dataset,
)


def test_generation_is_deterministic():
    a_train, a_test = gen_glyphs(seed=5, n_train=40, n_test=20)
    b_train, b_test = gen_glyphs(seed=5, n_train=40, n_test=20)
    assert np.array_equal(a_train.images, b_train.images)
    assert np.array_equal(a_test.images, b_test.images)
    assert np.array_equal(a_train.labels, b_train.labels)


def test_different_seeds_differ():
    a, _ = gen_glyphs(seed=5, n_train=40, n_test=20)
    b, _ = gen_glyphs(seed=6, n_train=40, n_test=20)
    assert not np.array_equal(a.images, b.images)


def test_train_and_test_draw_distinct_streams():
    train, test = gen_glyphs(seed=5, n_train=24, n_test=24)
    assert not np.array_equal(train.images, test.images)


def test_shapes_range_and_balance():
    train, test = gen_glyphs(seed=1, n_train=100, n_test=40)
    assert train.images.shape == (100, 1, 16, 16)
    assert test.images.shape == (40, 1, 16, 16)
    assert train.images.min() >= 0.0 and train.images.max() <= 1.0
    counts = np.bincount(train.labels, minlength=N_CLASSES)
    assert counts.max() - counts.min() <= 1  # balanced within one sample
    assert len(CLASS_NAMES) == N_CLASSES


def test_classes_are_visually_distinct():
    # shapes move and rescale per sample, so raw class means are weak
    # classifiers on purpose; still, nearest-mean must beat chance (0.25)
    train, test = gen_glyphs(seed=2, n_train=400, n_test=200)
    means = np.stack(
        [train.images[train.labels == c].mean(axis=0).ravel() for c in range(N_CLASSES)]
    )
    flat = test.images.reshape(len(test), -1)
    pred = np.argmin(
        ((flat[:, None, :] - means[None, :, :]) ** 2).sum(axis=2), axis=1
    )
    assert (pred == test.labels).mean() > 0.35


def test_round_trip_is_bit_exact(tmp_path):
    train, _ = gen_glyphs(seed=9, n_train=32, n_test=8)
    p = tmp_path / "train.awtd"
    save_dataset(train, p)
    back = load_dataset(p)
    assert np.array_equal(back.images, train.images)
    assert np.array_equal(back.labels, train.labels)
    assert back.split == "train" and back.seed == 9


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "bad.awtd"
    p.write_bytes(b"NOPE!" + b"\x00" * 64)
    with pytest.raises(FormatError, match="magic"):
        load_dataset(p)


def test_truncated_payload_rejected(tmp_path):
    train, _ = gen_glyphs(seed=9, n_train=32, n_test=8)
    p = tmp_path / "train.awtd"
    save_dataset(train, p)
    whole = p.read_bytes()
    p.write_bytes(whole[: len(whole) - 40])
    with pytest.raises(FormatError, match="end of file"):
        load_dataset(p)


def test_truncated_header_rejected(tmp_path):
    train, _ = gen_glyphs(seed=9, n_train=8, n_test=8)
    p = tmp_path / "train.awtd"
    save_dataset(train, p)
    p.write_bytes(p.read_bytes()[:7])
    with pytest.raises(FormatError):
        load_dataset(p)


def test_dataset_validates_contents():
    good = np.zeros((2, 1, 16, 16))
    with pytest.raises(ShapeError):
        Dataset(np.zeros((2, 16, 16)), np.array([0, 1]), "t", 0)
    with pytest.raises(ShapeError):
        Dataset(good + 2.0, np.array([0, 1]), "t", 0)  # out of [0, 1]
    with pytest.raises(ShapeError):
        Dataset(good, np.array([0, N_CLASSES]), "t", 0)
    with pytest.raises(ShapeError):
        gen_glyphs(seed=0, n_train=2, n_test=8)


def test_dataset_arrays_are_frozen():
    train, _ = gen_glyphs(seed=4, n_train=8, n_test=8)
    with pytest.raises(ValueError):
        train.images[0, 0, 0, 0] = 0.5


def test_head_slices_consistently():
    train, _ = gen_glyphs(seed=4, n_train=12, n_test=8)
    h = train.head(5)
    assert len(h) == 5
    assert np.array_equal(h.images, train.images[:5])
    assert np.array_equal(h.labels, train.labels[:5])
