"""Datasets, synthetic tasks, and the training-time augmentation chain."""
from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from adanas import rng as rng_mod
from adanas.model import TaskShape


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    task: TaskShape
    name: str = "dataset"

    def __post_init__(self):
        c = self.task.num_classes
        for split, y in (("train", self.y_train), ("test", self.y_test)):
            if y.size and (y.min() < 0 or y.max() >= c):
                raise DataError(f"{split} labels outside [0, {c})")

    @property
    def m(self):
        return len(self.y_train)

    def digest(self):
        h = hashlib.sha256()
        for a in (self.x_train, self.y_train, self.x_test, self.y_test):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(repr((self.task.input_shape, self.task.num_classes)).encode())
        return h.hexdigest()


# ---------------------------------------------------------------- loading

def _read_csv(path, num_classes, image_shape):
    rows, labels = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                label = int(row[0])
                feats = [float(v) for v in row[1:]]
            except ValueError:
                if lineno == 1 and not rows:
                    continue  # header
                raise DataError(f"{path}:{lineno}: cannot parse row {row[:4]}...") from None
            if rows and len(feats) != len(rows[0]):
                raise DataError(f"{path}:{lineno}: expected {len(rows[0])} features, got {len(feats)}")
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise DataError(f"{path}:{lineno}: label {label} out of range [0, {num_classes})")
            rows.append(feats)
            labels.append(label)
    if not rows:
        raise DataError(f"{path}: no data rows")
    x = np.asarray(rows, dtype=np.float64)
    if image_shape is not None:
        if int(np.prod(image_shape)) != x.shape[1]:
            raise DataError(f"{path}: {x.shape[1]} features cannot be shaped as {tuple(image_shape)}")
        x = x.reshape(len(x), *image_shape)
    return x, np.asarray(labels, dtype=np.int64)


# Binary image batches (little-endian):
#   8s magic b"ADNSIMG1", 5 x u32: count, height, width, channels, num_classes,
#   then `count` records of u8 label followed by height*width*channels u8 pixels (HWC).
BIN_MAGIC = b"ADNSIMG1"
_BIN_HEADER = struct.Struct("<IIIII")


def write_binary(path, images, labels, num_classes):
    images = np.asarray(images, dtype=np.uint8)
    n, h, w, c = images.shape
    with open(path, "wb") as fh:
        fh.write(BIN_MAGIC + _BIN_HEADER.pack(n, h, w, c, num_classes))
        for img, lab in zip(images, labels):
            fh.write(struct.pack("<B", int(lab)) + img.tobytes())


def _read_binary(path, num_classes):
    raw = Path(path).read_bytes()
    if len(raw) < 8 + _BIN_HEADER.size or raw[:8] != BIN_MAGIC:
        raise DataError(f"{path}: not an image batch file (bad magic)")
    n, h, w, c, classes = _BIN_HEADER.unpack_from(raw, 8)
    if num_classes is not None and num_classes != classes:
        raise DataError(f"{path}: header declares {classes} classes, expected {num_classes}")
    rec = 1 + h * w * c
    body = raw[8 + _BIN_HEADER.size:]
    if n == 0:
        raise DataError(f"{path}: no records")
    if len(body) != n * rec:
        raise DataError(f"{path}: payload is {len(body)} bytes, header implies {n * rec}")
    table = np.frombuffer(body, dtype=np.uint8).reshape(n, rec)
    labels = table[:, 0].astype(np.int64)
    bad = np.nonzero(labels >= classes)[0]
    if bad.size:
        raise DataError(f"{path}: record {bad[0]} has label {labels[bad[0]]} out of range [0, {classes})")
    images = table[:, 1:].reshape(n, h, w, c).astype(np.float64) / 255.0
    return images, labels, classes


def load_dataset(source, format="csv", test_source=None, num_classes=None, image_shape=None, name=None):
    """Load a train file (and optional test file) in ``csv`` or ``binary`` format."""
    def one(path):
        if not Path(path).exists():
            raise FileNotFoundError(path)
        if format == "csv":
            x, y = _read_csv(path, num_classes, image_shape)
            return x, y, num_classes
        if format == "binary":
            return _read_binary(path, num_classes)
        raise DataError(f"unknown dataset format {format!r}")

    x, y, classes = one(source)
    if test_source is not None:
        xt, yt, classes_t = one(test_source)
        classes = classes or classes_t
    else:
        xt, yt = x[:0], y[:0]
    if classes is None:
        classes = int(max(y.max(), yt.max() if yt.size else 0)) + 1
    task = TaskShape(x.shape[1:], max(classes, 2))
    return Dataset(x, y, xt, yt, task, name or Path(source).stem)


# ---------------------------------------------------------------- synthetic tasks

def _balanced_labels(m, classes, gen):
    labels = np.arange(m) % classes
    return gen.permutation(labels)


def _spirals(labels, classes, noise, gen):
    r = gen.uniform(0.05, 1.0, size=labels.size)
    angle = 2 * np.pi * labels / classes + 4.0 * r
    pts = np.stack([r * np.sin(angle), r * np.cos(angle)], axis=1)
    return pts + noise * gen.standard_normal(pts.shape)


def _gaussians(labels, classes, noise, gen, radius=3.0):
    theta = 2 * np.pi * labels / classes
    means = radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return means + noise * gen.standard_normal(means.shape)


def _bars(labels, classes, noise, gen, size=8):
    """Small one-channel images; class k is a bar at orientation ``k * pi / classes``."""
    coords = np.arange(size) - (size - 1) / 2
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    out = np.empty((labels.size, size, size, 1))
    for i, lab in enumerate(labels):
        theta = np.pi * lab / classes
        offset = gen.uniform(-1.5, 1.5)
        dist = np.abs(xx * np.sin(theta) - yy * np.cos(theta) - offset)
        img = np.clip(1.0 - dist, 0.0, 1.0)
        out[i, :, :, 0] = img + noise * gen.standard_normal(img.shape)
    return out


_SYNTH = {"spirals": _spirals, "gaussians": _gaussians, "bars": _bars}


def synthetic_task(kind, m, classes, noise, seed, test_m=None) -> Dataset:
    """Deterministic synthetic classification task; train and test are drawn from separate streams.

    ``spirals`` and ``gaussians`` are 2-D point sets; ``bars`` is 8x8x1 images.
    """
    if kind not in _SYNTH:
        raise DataError(f"unknown synthetic task {kind!r}; choose from {sorted(_SYNTH)}")
    if m < classes:
        raise DataError(f"need m >= classes, got m={m}, classes={classes}")
    test_m = m // 3 if test_m is None else test_m
    splits = []
    for split, n in (("train", m), ("test", test_m)):
        gen = rng_mod.stream(seed, "synthetic", kind, split)
        y = _balanced_labels(n, classes, gen)
        splits.append((_SYNTH[kind](y, classes, noise, gen), y.astype(np.int64)))
    (x, y), (xt, yt) = splits
    return Dataset(x, y, xt, yt, TaskShape(x.shape[1:], classes), kind)


# ---------------------------------------------------------------- augmentation

@dataclass(frozen=True)
class AugmentConfig:
    pad_to: int = 40
    crop_to: int = 32
    flip: bool = True
    whiten: bool = True
    cutout_size: int = 16

    def __post_init__(self):
        if not self.pad_to >= self.crop_to >= 1:
            raise ValueError(f"need pad_to >= crop_to >= 1, got {self.pad_to}, {self.crop_to}")
        if self.cutout_size < 0:
            raise ValueError("cutout_size must be >= 0")


def pad_center(image, size):
    h, w = image.shape[:2]
    if h > size or w > size:
        raise ValueError(f"cannot pad {h}x{w} to {size}x{size}")
    top, left = (size - h) // 2, (size - w) // 2
    out = np.zeros((size, size) + image.shape[2:], dtype=np.float64)
    out[top:top + h, left:left + w] = image
    return out


def crop(image, top, left, size):
    return image[top:top + size, left:left + size]


def flip_horizontal(image):
    return image[:, ::-1]


def whiten(image):
    """Per-image standardization with the std floored at ``1/sqrt(num_elements)``."""
    mean = image.mean()
    adjusted = max(image.std(), 1.0 / np.sqrt(image.size))
    return (image - mean) / adjusted


def cutout(image, cy, cx, size):
    """Zero a ``size`` x ``size`` square centered at ``(cy, cx)``, clipped at the borders."""
    if size <= 0:
        return image
    out = image.copy()
    h, w = image.shape[:2]
    y0, x0 = cy - size // 2, cx - size // 2
    out[max(y0, 0):min(y0 + size, h), max(x0, 0):min(x0 + size, w)] = 0.0
    return out


def augment(image, cfg: AugmentConfig, gen: np.random.Generator):
    """Pad, random crop, random flip, whiten, then cutout."""
    img = pad_center(image, cfg.pad_to)
    span = cfg.pad_to - cfg.crop_to
    top, left = gen.integers(0, span + 1, size=2)
    img = crop(img, top, left, cfg.crop_to)
    if cfg.flip and gen.random() < 0.5:
        img = flip_horizontal(img)
    if cfg.whiten:
        img = whiten(img)
    if cfg.cutout_size:
        cy, cx = gen.integers(0, cfg.crop_to, size=2)
        img = cutout(img, cy, cx, cfg.cutout_size)
    return np.ascontiguousarray(img)


def eval_transform(image, cfg: AugmentConfig):
    """Deterministic counterpart of ``augment``: centered crop and whitening only."""
    img = pad_center(image, cfg.pad_to)
    off = (cfg.pad_to - cfg.crop_to) // 2
    img = crop(img, off, off, cfg.crop_to)
    if cfg.whiten:
        img = whiten(img)
    return np.ascontiguousarray(img)


def eval_inputs(x, cfg: AugmentConfig | None):
    """Evaluation-mode version of a whole array of inputs."""
    if cfg is None or x.ndim != 4:
        return x
    return np.stack([eval_transform(img, cfg) for img in x]) if len(x) else x


def batch_iterator(x, y, batch_size, shuffle_seed=None, augment_cfg=None, train=True, gen=None):
    """Yield ``(inputs, labels)`` batches.

    Training mode reshuffles every epoch and augments every draw, forever.
    Evaluation mode makes one pass in data order with the deterministic transform.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(y)
    image = x.ndim == 4 and augment_cfg is not None
    if not train:
        for start in range(0, n, batch_size):
            xb = x[start:start + batch_size]
            yield (eval_inputs(xb, augment_cfg) if image else xb), y[start:start + batch_size]
        return
    if gen is None:
        gen = rng_mod.stream(shuffle_seed or 0, "batches")
    while True:
        order = gen.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb = x[idx]
            if image:
                xb = np.stack([augment(img, augment_cfg, gen) for img in xb])
            yield xb, y[idx]
