"""The (depth, width) subnetwork family, parameter counting, and checkpoints.

A subnetwork is a linear stem mapping the input to ``width`` channels,
``depth`` identical cells, and an affine head to the class logits. Image
tasks use 3x3 conv + relu cells and global average pooling before the head;
flat tasks use affine + relu cells.
"""
from __future__ import annotations

import hashlib
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from adanas import rng as rng_mod
from adanas.autograd import ops
from adanas.autograd.tensor import ShapeError, Tensor

KERNEL = 3

_ARCH_RE = re.compile(r"^\s*(\d+)\s*@\s*(\d+)\s*$")


@dataclass(frozen=True, order=True)
class ArchSpec:
    depth: int
    width: int

    def __post_init__(self):
        if int(self.depth) < 1 or int(self.width) < 1:
            raise ValueError(f"depth and width must be >= 1, got {self.depth}@{self.width}")

    @classmethod
    def parse(cls, text):
        if isinstance(text, ArchSpec):
            return text
        m = _ARCH_RE.match(str(text))
        if not m:
            raise ValueError(f"architecture must look like 'X@Y', got {text!r}")
        return cls(int(m.group(1)), int(m.group(2)))

    def deeper(self, n=1):
        return ArchSpec(self.depth + n, self.width)

    def wider(self, n):
        return ArchSpec(self.depth, self.width + n)

    def __str__(self):
        return f"{self.depth}@{self.width}"


@dataclass(frozen=True)
class TaskShape:
    input_shape: tuple
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        if len(self.input_shape) not in (1, 3) or min(self.input_shape) < 1:
            raise ValueError(f"input_shape must be (features,) or (H, W, C), got {self.input_shape}")
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")

    @property
    def is_image(self):
        return len(self.input_shape) == 3

    @property
    def in_channels(self):
        return self.input_shape[-1] if self.is_image else self.input_shape[0]


def _layer_shapes(arch: ArchSpec, task: TaskShape):
    """Ordered ``(name, shape)`` for every parameter tensor."""
    w, c = arch.width, task.num_classes
    if task.is_image:
        shapes = [("stem.weight", (KERNEL, KERNEL, task.in_channels, w)), ("stem.bias", (w,))]
        for i in range(arch.depth):
            shapes += [(f"cell{i}.weight", (KERNEL, KERNEL, w, w)), (f"cell{i}.bias", (w,))]
    else:
        shapes = [("stem.weight", (task.in_channels, w)), ("stem.bias", (w,))]
        for i in range(arch.depth):
            shapes += [(f"cell{i}.weight", (w, w)), (f"cell{i}.bias", (w,))]
    shapes += [("head.weight", (w, c)), ("head.bias", (c,))]
    return shapes


def param_count(arch: ArchSpec, task: TaskShape) -> int:
    """Exact number of trainable scalars in ``build_subnetwork(arch, task)``."""
    w, c = arch.width, task.num_classes
    k2 = KERNEL * KERNEL if task.is_image else 1
    stem = k2 * task.in_channels * w + w
    cell = k2 * w * w + w
    head = w * c + c
    return stem + arch.depth * cell + head


class ParameterVector:
    """Named parameter tensors in a fixed order."""

    def __init__(self, named):
        self._named = list(named)

    def __iter__(self):
        return iter(t for _, t in self._named)

    def __len__(self):
        return len(self._named)

    def __getitem__(self, name):
        for n, t in self._named:
            if n == name:
                return t
        raise KeyError(name)

    def items(self):
        return list(self._named)

    def names(self):
        return [n for n, _ in self._named]

    @property
    def total_count(self):
        return sum(t.size for _, t in self._named)

    def flat(self):
        return np.concatenate([t.data.reshape(-1) for _, t in self._named])

    def load_flat(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.size != self.total_count:
            raise ValueError(f"expected {self.total_count} values, got {values.size}")
        offset = 0
        for _, t in self._named:
            t.data[...] = values[offset:offset + t.size].reshape(t.shape)
            offset += t.size

    def checksum(self):
        return hashlib.sha256(self.flat().astype("<f8").tobytes()).hexdigest()


class Subnetwork:
    def __init__(self, arch, task, params, iteration_born=0):
        self.arch = arch
        self.task = task
        self.params = params
        self.iteration_born = iteration_born
        self.frozen = False

    def freeze(self):
        """Make parameters constants: no grads, and the arrays become read-only."""
        for t in self.params:
            t.requires_grad = False
            t.grad = None
            t.data.flags.writeable = False
        self.frozen = True
        return self

    def checksum(self):
        return self.params.checksum()

    def __repr__(self):
        state = "frozen" if self.frozen else "trainable"
        return f"Subnetwork({self.arch}, {state}, born={self.iteration_born})"


def build_subnetwork(arch: ArchSpec, task: TaskShape, seed, iteration_born=0, rng=None) -> Subnetwork:
    """Initialize a trainable network: He-uniform weights, zero biases.

    ``rng`` overrides the stream derived from ``seed``.
    """
    gen = rng if rng is not None else rng_mod.stream(seed, "init")
    named = []
    for name, shape in _layer_shapes(arch, task):
        if name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            bound = np.sqrt(6.0 / fan_in)
            data = gen.uniform(-bound, bound, size=shape)
        named.append((name, Tensor(data, requires_grad=True, name=name)))
    return Subnetwork(arch, task, ParameterVector(named), iteration_born)


def logits(net: Subnetwork, batch) -> Tensor:
    """Pre-softmax outputs ``[batch, num_classes]``."""
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    expected = net.task.input_shape
    if tuple(x.shape[1:]) != expected:
        raise ShapeError("logits", x.shape, (None, *expected))
    p = net.params
    if net.task.is_image:
        h = ops.conv2d(x, p["stem.weight"], p["stem.bias"])
        for i in range(net.arch.depth):
            h = ops.relu(ops.conv2d(h, p[f"cell{i}.weight"], p[f"cell{i}.bias"]))
        h = ops.global_average_pool(h)
    else:
        h = ops.affine(x, p["stem.weight"], p["stem.bias"])
        for i in range(net.arch.depth):
            h = ops.relu(ops.affine(h, p[f"cell{i}.weight"], p[f"cell{i}.bias"]))
    return ops.affine(h, p["head.weight"], p["head.bias"])


def predict_logits(net: Subnetwork, x, chunk=1024) -> np.ndarray:
    """Logits as a plain array, evaluated in chunks without recording gradients."""
    if net.frozen:
        return np.concatenate([logits(net, x[i:i + chunk]).data for i in range(0, len(x), chunk)])
    saved = [t.requires_grad for t in net.params]
    try:
        for t in net.params:
            t.requires_grad = False
        return np.concatenate([logits(net, x[i:i + chunk]).data for i in range(0, len(x), chunk)])
    finally:
        for t, r in zip(net.params, saved):
            t.requires_grad = r


# Checkpoint layout (little-endian):
#   8s magic, B version, I depth, I width, I iteration_born, I num_classes,
#   B input rank, rank x I input dims, 32s sha256 of payload, Q count, count x f8
MAGIC = b"ADNSCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(net: Subnetwork, path):
    flat = net.params.flat().astype("<f8")
    dims = net.task.input_shape
    header = MAGIC + struct.pack(
        "<BIIIIB", VERSION, net.arch.depth, net.arch.width, net.iteration_born,
        net.task.num_classes, len(dims),
    )
    header += struct.pack(f"<{len(dims)}I", *dims)
    header += hashlib.sha256(flat.tobytes()).digest()
    header += struct.pack("<Q", flat.size)
    Path(path).write_bytes(header + flat.tobytes())


def load_checkpoint(path, expected_checksum=None) -> Subnetwork:
    """Read a checkpoint back as a frozen subnetwork."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    off = 8
    version, depth, width, born, classes, rank = struct.unpack_from("<BIIIIB", raw, off)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off += struct.calcsize("<BIIIIB")
    dims = struct.unpack_from(f"<{rank}I", raw, off)
    off += 4 * rank
    digest = raw[off:off + 32]
    off += 32
    (count,) = struct.unpack_from("<Q", raw, off)
    off += 8
    payload = raw[off:]
    if len(payload) != 8 * count:
        raise CheckpointError(f"{path}: truncated payload")
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: payload checksum mismatch")
    if expected_checksum is not None and digest.hex() != expected_checksum:
        raise CheckpointError(f"{path}: checksum {digest.hex()} does not match manifest {expected_checksum}")
    arch, task = ArchSpec(depth, width), TaskShape(dims, classes)
    named = [(name, Tensor(np.zeros(shape), name=name)) for name, shape in _layer_shapes(arch, task)]
    net = Subnetwork(arch, task, ParameterVector(named), born)
    net.params.load_flat(np.frombuffer(payload, dtype="<f8"))
    return net.freeze()
