"""Procedural 16x16 glyph dataset: four shape classes with jitter and noise.

Classes 0..3 are filled square, disk, cross, triangle. Every image gets a
random center offset (+-3 px), size (6..12 px), foreground intensity
(0.6..1.0) and additive uniform noise of amplitude 0.1, clamped to [0, 1].
Shapes are rasterized with 4x4 subpixel coverage so small disks and squares
stay distinguishable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ShapeError
from .fileio import FORMAT_VERSION, read_container, take, write_container
from .seeding import derive_seed

MAGIC = b"AWTD1"
IMG_H = 16
IMG_W = 16
N_CLASSES = 4
CLASS_NAMES = ("square", "disk", "cross", "triangle")

_SUPER = 4  # subpixel samples per axis


@dataclass(frozen=True, eq=False)
class Dataset:
    """Image batch (M, 1, 16, 16) in [0, 1] plus integer labels (M,)."""

    images: np.ndarray
    labels: np.ndarray
    split: str
    seed: int

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4 or images.shape[1:] != (1, IMG_H, IMG_W):
            raise ShapeError(f"images: expected (M, 1, {IMG_H}, {IMG_W}), got {images.shape}")
        if labels.shape != (images.shape[0],):
            raise ShapeError(f"labels: expected ({images.shape[0]},), got {labels.shape}")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ShapeError("images: pixel values must lie in [0, 1]")
        if labels.size and (labels.min() < 0 or labels.max() >= N_CLASSES):
            raise ShapeError(f"labels: must lie in [0, {N_CLASSES})")
        images.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.images.shape[0]

    def head(self, m: int) -> "Dataset":
        return Dataset(self.images[:m], self.labels[:m], self.split, self.seed)


def _inside(label: int, x, y, cx, cy, size):
    """Boolean coverage masks for one shape class, broadcast over samples."""
    dx = x - cx
    dy = y - cy
    half = size / 2.0
    if label == 0:  # square
        return (np.abs(dx) <= half) & (np.abs(dy) <= half)
    if label == 1:  # disk
        return dx * dx + dy * dy <= half * half
    if label == 2:  # cross: two bars of width size/3
        arm = size / 6.0
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= half)) | (
            (np.abs(dy) <= arm) & (np.abs(dx) <= half)
        )
    # triangle: apex up, half-width grows linearly toward the base
    inside_y = (dy >= -half) & (dy <= half)
    return inside_y & (np.abs(dx) <= (dy + half) / 2.0)


def _gen_split(rng_seed: int, m: int, split: str, seed: int) -> Dataset:
    labels = np.arange(m, dtype=np.int64) % N_CLASSES  # balanced within +-1
    rng = np.random.default_rng(rng_seed)
    cx = 7.5 + rng.uniform(-3.0, 3.0, m)
    cy = 7.5 + rng.uniform(-3.0, 3.0, m)
    size = rng.uniform(6.0, 12.0, m)
    amp = rng.uniform(0.6, 1.0, m)
    noise = rng.uniform(-0.1, 0.1, (m, IMG_H, IMG_W))

    off = (np.arange(_SUPER) + 0.5) / _SUPER - 0.5
    # sample grids: X[r, c, a, b] = c + off[b], Y[r, c, a, b] = r + off[a]
    xg = np.arange(IMG_W)[None, :, None, None] + off[None, None, None, :]
    yg = np.arange(IMG_H)[:, None, None, None] + off[None, None, :, None]

    images = np.empty((m, IMG_H, IMG_W))
    for cls in range(N_CLASSES):
        idx = np.nonzero(labels == cls)[0]
        if idx.size == 0:
            continue
        mask = _inside(
            cls,
            xg[None],
            yg[None],
            cx[idx, None, None, None, None],
            cy[idx, None, None, None, None],
            size[idx, None, None, None, None],
        )
        images[idx] = mask.mean(axis=(3, 4))
    images *= amp[:, None, None]
    images += noise
    np.clip(images, 0.0, 1.0, out=images)
    # snap to the float32 grid so the on-disk round trip is bit-exact
    images = images.astype(np.float32).astype(np.float64)
    return Dataset(images[:, None, :, :], labels, split, seed)


def gen_glyphs(seed: int, n_train: int, n_test: int) -> tuple[Dataset, Dataset]:
    """Deterministic train/test split from disjoint derived sub-seeds."""
    if n_train < N_CLASSES or n_test < N_CLASSES:
        raise ShapeError(f"need at least {N_CLASSES} samples per split")
    train = _gen_split(derive_seed(seed, "glyphs", "train"), n_train, "train", seed)
    test = _gen_split(derive_seed(seed, "glyphs", "test"), n_test, "test", seed)
    return train, test


def save_dataset(ds: Dataset, path) -> None:
    header = {
        "version": FORMAT_VERSION,
        "seed": int(ds.seed),
        "split": ds.split,
        "m": len(ds),
        "k": N_CLASSES,
        "h": IMG_H,
        "w": IMG_W,
    }
    payloads = [
        np.ascontiguousarray(ds.images, dtype="<f4").tobytes(),
        np.ascontiguousarray(ds.labels, dtype="<i4").tobytes(),
    ]
    write_container(path, MAGIC, header, payloads)


def load_dataset(path) -> Dataset:
    header, payload = read_container(path, MAGIC)
    for key in ("seed", "split", "m", "k", "h", "w"):
        if key not in header:
            raise FormatError(f"{path}: header missing {key!r}")
    if header["k"] != N_CLASSES or header["h"] != IMG_H or header["w"] != IMG_W:
        raise FormatError(f"{path}: unsupported geometry {header}")
    m = int(header["m"])
    img_bytes = m * IMG_H * IMG_W * 4
    raw_img = take(payload, 0, img_bytes, path, "images")
    raw_lab = take(payload, img_bytes, m * 4, path, "labels")
    images = np.frombuffer(raw_img, dtype="<f4").reshape(m, 1, IMG_H, IMG_W)
    labels = np.frombuffer(raw_lab, dtype="<i4").astype(np.int64)
    return Dataset(images.astype(np.float64), labels, header["split"], int(header["seed"]))
