"""Model construction, training, and the checkpoint format."""

import numpy as np
import pytest

from awtlab.errors import ConfigError, CorruptCheckpointError, FormatError
from awtlab.glyphs import gen_glyphs
from awtlab.nn import forward, model_hash
from awtlab.zoo import (
    ARCH_TAGS,
    TrainConfig,
    accuracy,
    build_model,
    load_checkpoint,
    make_checkpoint,
    prediction_disagreement,
    save_checkpoint,
    train_model,
)


@pytest.mark.parametrize("arch", ARCH_TAGS)
def test_build_is_deterministic_per_seed(arch):
    a = build_model(arch, 3)
    b = build_model(arch, 3)
    c = build_model(arch, 4)
    assert model_hash(a) == model_hash(b)
    assert model_hash(a) != model_hash(c)
    assert a.arch_tag == arch


def test_unknown_arch_rejected():
    with pytest.raises(ConfigError):
        build_model("mlp-giant", 0)


def test_untrained_model_is_at_chance(quick_data):
    _, test = quick_data
    m = build_model("mlp-small", 0)
    acc = accuracy(m, test.images, test.labels)
    assert 0.0 <= acc <= 0.6  # 4 classes, random init


def test_zero_epochs_returns_initial_params(quick_data):
    train, test = quick_data
    m = build_model("mlp-small", 5)
    out, metrics = train_model(m, train, TrainConfig(epochs=0, seed=5), test)
    assert model_hash(out) == model_hash(m)
    assert metrics.epochs_run == 0


def test_training_learns_and_is_deterministic(quick_data):
    train, test = quick_data
    cfg = TrainConfig(epochs=8, seed=1)
    m1, met1 = train_model(build_model("mlp-small", 1), train, cfg, test)
    m2, met2 = train_model(build_model("mlp-small", 1), train, cfg, test)
    assert model_hash(m1) == model_hash(m2)
    assert met1.final_test_acc == met2.final_test_acc
    chance = 1.0 / 4
    assert met1.final_train_acc > chance + 0.2


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=-1)
    with pytest.raises(ConfigError):
        TrainConfig(batch=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(momentum=1.0)


def test_prediction_disagreement_bounds(quick_model):
    _, test = gen_glyphs(seed=3, n_train=96, n_test=64)
    other = build_model("mlp-small", 77)
    assert prediction_disagreement(quick_model, quick_model, test.images) == 0.0
    d = prediction_disagreement(quick_model, other, test.images)
    assert 0.0 <= d <= 1.0


def test_accuracy_chunking_is_invisible(quick_model, quick_data):
    _, test = quick_data
    a = accuracy(quick_model, test.images, test.labels, chunk=7)
    b = accuracy(quick_model, test.images, test.labels, chunk=512)
    assert a == b


def test_checkpoint_round_trip_bit_exact(tmp_path, quick_model):
    p = tmp_path / "model.awtc"
    save_checkpoint(make_checkpoint(quick_model, {"note": "unit"}), p)
    back = load_checkpoint(p)
    model = back.to_model()
    assert back.meta["note"] == "unit"
    assert back.meta["content_hash"] == model_hash(quick_model)
    assert model_hash(model) == model_hash(quick_model)
    for (na, a), (nb, b) in zip(quick_model.params, model.params):
        assert na == nb
        assert np.array_equal(a, b)


def test_checkpoint_preserves_predictions(tmp_path, quick_model, quick_data):
    _, test = quick_data
    p = tmp_path / "model.awtc"
    save_checkpoint(make_checkpoint(quick_model), p)
    model = load_checkpoint(p).to_model()
    np.testing.assert_array_equal(
        forward(model, test.images[:16]), forward(quick_model, test.images[:16])
    )


def test_corrupt_checkpoint_detected(tmp_path, quick_model):
    p = tmp_path / "model.awtc"
    save_checkpoint(make_checkpoint(quick_model), p)
    raw = bytearray(p.read_bytes())
    raw[-3] ^= 0xFF  # flip one payload byte
    p.write_bytes(bytes(raw))
    with pytest.raises((CorruptCheckpointError, FormatError)):
        load_checkpoint(p)


def test_truncated_checkpoint_detected(tmp_path, quick_model):
    p = tmp_path / "model.awtc"
    save_checkpoint(make_checkpoint(quick_model), p)
    whole = p.read_bytes()
    p.write_bytes(whole[: len(whole) // 2])
    with pytest.raises(FormatError):
        load_checkpoint(p)


def test_checkpoint_wrong_magic(tmp_path):
    p = tmp_path / "model.awtc"
    p.write_bytes(b"AWTD1" + b"\x00" * 32)  # dataset magic, not checkpoint
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(p)
