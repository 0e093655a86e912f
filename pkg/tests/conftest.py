"""Shared fixtures.

Training is the slow part, so everything trained is session-scoped and
derived from the shipped default config where possible. Unit tests that
only need shapes use the quick 96-sample dataset.
"""

from __future__ import annotations

from pathlib import Path

import pytest

from awtlab.attacks import AttackConfig, METHODS, run_attack
from awtlab.glyphs import gen_glyphs
from awtlab.harness import load_config
from awtlab.zoo import TrainConfig, build_model, train_model

REPO_ROOT = Path(__file__).resolve().parent.parent
DEFAULT_CONFIG = REPO_ROOT / "configs" / "default.json"
SMOKE_CONFIG = REPO_ROOT / "configs" / "smoke.json"


@pytest.fixture(scope="session")
def quick_data():
    return gen_glyphs(seed=3, n_train=96, n_test=64)


@pytest.fixture(scope="session")
def quick_model(quick_data):
    train, test = quick_data
    model, _ = train_model(
        build_model("mlp-small", seed=9), train, TrainConfig(epochs=8, seed=9), test
    )
    return model


@pytest.fixture(scope="session")
def default_cfg():
    return load_config(DEFAULT_CONFIG)


@pytest.fixture(scope="session")
def default_data(default_cfg):
    ds = default_cfg.dataset
    return gen_glyphs(ds.seed, ds.n_train, ds.n_test)


@pytest.fixture(scope="session")
def population_models(default_cfg, default_data):
    """label -> trained Model for every entry of the shipped default config."""
    train, test = default_data
    out = {}
    for entry in default_cfg.population:
        model, _ = train_model(
            build_model(entry.arch, entry.train_seed),
            train,
            TrainConfig(seed=entry.train_seed),
            test,
        )
        out[entry.label] = model
    return out


@pytest.fixture(scope="session")
def default_surrogate(default_data):
    train, test = default_data
    model, _ = train_model(
        build_model("mlp-small", seed=1), train, TrainConfig(seed=1), test
    )
    return model


@pytest.fixture(scope="session")
def method_batches(default_surrogate, default_data):
    """All seven methods at stock defaults, 200 samples, one shared seed."""
    _, test = default_data
    x, y = test.images[:200], test.labels[:200]
    return {
        m: run_attack(m, default_surrogate, x, y, AttackConfig(rng_seed=42))
        for m in sorted(METHODS)
    }
