"""Small classifier population: fixed architectures, SGD training, checkpoints."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    CorruptCheckpointError,
    FormatError,
    ShapeError,
    TrainingDivergedError,
)
from .fileio import FORMAT_VERSION, read_container, take, write_container
from .glyphs import Dataset, IMG_H, IMG_W, N_CLASSES
from .nn import (
    AvgPool2,
    Conv3x3,
    Dense,
    Flatten,
    Model,
    ParamSet,
    Relu,
    forward,
    grad_dual,
    init_model,
    model_hash,
    name_layers,
)

MAGIC = b"AWTC1"
ARCH_TAGS = ("mlp-small", "mlp-wide", "cnn-small")

INPUT_SHAPE = (1, IMG_H, IMG_W)


def arch_layers(arch: str) -> list:
    """Fresh layer stack for a named architecture."""
    if arch == "mlp-small":
        return [Flatten(), Dense(128), Relu(), Dense(64), Relu(), Dense(N_CLASSES)]
    if arch == "mlp-wide":
        return [Flatten(), Dense(256), Relu(), Dense(128), Relu(), Dense(N_CLASSES)]
    if arch == "cnn-small":
        return [
            Conv3x3(8),
            Relu(),
            AvgPool2(),
            Conv3x3(16),
            Relu(),
            AvgPool2(),
            Flatten(),
            Dense(N_CLASSES),
        ]
    raise ConfigError(f"unknown architecture {arch!r}, expected one of {ARCH_TAGS}")


def build_model(arch: str, seed: int) -> Model:
    """Deterministic Glorot-uniform init, zero biases."""
    return init_model(arch_layers(arch), INPUT_SHAPE, seed, arch_tag=arch)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch < 1 or self.lr <= 0 or not 0 <= self.momentum < 1:
            raise ConfigError(f"invalid training configuration: {self}")


@dataclass(frozen=True)
class TrainMetrics:
    final_train_acc: float
    final_test_acc: float | None
    final_loss: float
    epochs_run: int


def accuracy(model: Model, images, labels, chunk: int = 512) -> float:
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    if len(images) == 0:
        raise ShapeError("accuracy: empty batch")
    hits = 0
    for i in range(0, len(images), chunk):
        logits = forward(model, images[i : i + chunk])
        hits += int((logits.argmax(axis=1) == labels[i : i + chunk]).sum())
    return hits / len(images)


def prediction_disagreement(a: Model, b: Model, images, chunk: int = 512) -> float:
    """Fraction of inputs where two models pick different classes."""
    images = np.asarray(images, dtype=np.float64)
    differ = 0
    for i in range(0, len(images), chunk):
        pa = forward(a, images[i : i + chunk]).argmax(axis=1)
        pb = forward(b, images[i : i + chunk]).argmax(axis=1)
        differ += int((pa != pb).sum())
    return differ / len(images)


def train_model(
    model: Model,
    train: Dataset,
    cfg: TrainConfig,
    test: Dataset | None = None,
) -> tuple[Model, TrainMetrics]:
    """SGD with classical momentum over shuffled minibatches.

    Deterministic given (model, data, cfg.seed). Raises
    TrainingDivergedError naming the epoch and batch if the loss leaves
    the finite range.
    """
    rng = np.random.default_rng(cfg.seed)
    params = {n: a.copy() for n, a in model.params}
    velocity = {n: np.zeros_like(a) for n, a in params.items()}
    current = model
    m = len(train)
    last_loss = float("nan")

    for epoch in range(cfg.epochs):
        perm = rng.permutation(m)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, m, cfg.batch):
            sel = perm[start : start + cfg.batch]
            xb = train.images[sel]
            yb = train.labels[sel]
            try:
                dual = grad_dual(current, xb, yb)
            except Exception as e:
                raise TrainingDivergedError(
                    f"epoch {epoch} batch {n_batches}: {e}"
                ) from e
            if not np.isfinite(dual.loss_value):
                raise TrainingDivergedError(
                    f"loss non-finite at epoch {epoch} batch {n_batches}"
                )
            for name, _ in model.params:
                g = dual.wrt_params.get(name)
                velocity[name] = cfg.momentum * velocity[name] + g
                params[name] = params[name] - cfg.lr * velocity[name]
            current = model.with_params(
                ParamSet(tuple((n, params[n]) for n, _ in model.params))
            )
            epoch_loss += dual.loss_value
            n_batches += 1
        last_loss = epoch_loss / max(n_batches, 1)

    metrics = TrainMetrics(
        final_train_acc=accuracy(current, train.images, train.labels),
        final_test_acc=(
            accuracy(current, test.images, test.labels) if test is not None else None
        ),
        final_loss=last_loss,
        epochs_run=cfg.epochs,
    )
    return current, metrics


@dataclass(frozen=True, eq=False)
class Checkpoint:
    """Persisted model: architecture tag, parameters and training metadata."""

    arch: str
    params: ParamSet
    meta: dict

    def to_model(self) -> Model:
        return Model(INPUT_SHAPE, tuple(name_layers(arch_layers(self.arch))), self.params, self.arch)


def make_checkpoint(model: Model, meta: dict | None = None) -> Checkpoint:
    meta = dict(meta or {})
    meta["content_hash"] = model_hash(model)
    return Checkpoint(arch=model.arch_tag, params=model.params, meta=meta)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    manifest = []
    offset = 0
    chunks = []
    for name, arr in ckpt.params:
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "byte_offset": offset,
                "byte_len": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    header = {
        "version": FORMAT_VERSION,
        "arch": ckpt.arch,
        "meta": ckpt.meta,
        "params": manifest,
    }
    write_container(path, MAGIC, header, chunks)


def load_checkpoint(path) -> Checkpoint:
    header, payload = read_container(path, MAGIC)
    for key in ("arch", "meta", "params"):
        if key not in header:
            raise FormatError(f"{path}: header missing {key!r}")
    entries = []
    for item in header["params"]:
        raw = take(payload, item["byte_offset"], item["byte_len"], path, item["name"])
        arr = np.frombuffer(raw, dtype="<f8").reshape(item["shape"])
        entries.append((item["name"], arr))
    ckpt = Checkpoint(arch=header["arch"], params=ParamSet(tuple(entries)), meta=header["meta"])
    stored = ckpt.meta.get("content_hash")
    actual = model_hash(ckpt.to_model())
    if stored != actual:
        raise CorruptCheckpointError(
            f"{path}: corrupt checkpoint, content hash {actual} != stored {stored}"
        )
    return ckpt
