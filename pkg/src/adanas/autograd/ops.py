"""Differentiable ops.

Layouts: dense activations are ``[batch, features]``; images are NHWC
``[batch, height, width, channels]``; conv weights are HWIO
``[k, k, in_channels, out_channels]``.
"""
from __future__ import annotations

import numpy as np

from adanas.autograd import kernels
from adanas.autograd.tensor import NumericError, ShapeError, Tensor


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(op, data, parents, backward_fn):
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op}: non-finite output")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def affine(x, w, b):
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError("affine", x.shape, w.shape)
    if b.shape != (w.shape[1],):
        raise ShapeError("affine", w.shape, b.shape)
    xd, wd = x.data, w.data

    def back(g):
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    return _result("affine", xd @ wd + b.data, (x, w, b), back)


def conv2d(x, w, b):
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("conv2d", x.shape, w.shape)
    k = w.shape[0]
    if w.shape[1] != k or k % 2 != 1 or x.shape[3] != w.shape[2]:
        raise ShapeError("conv2d", x.shape, w.shape)
    if b.shape != (w.shape[3],):
        raise ShapeError("conv2d", w.shape, b.shape)
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    out = kernels.conv2d_forward(xd, wd, np.ascontiguousarray(b.data))

    def back(g):
        g = np.ascontiguousarray(g)
        gx = kernels.conv2d_backward_input(g, wd) if x.requires_grad else None
        if w.requires_grad or b.requires_grad:
            gw, gb = kernels.conv2d_backward_weight(xd, g, k)
        else:
            gw = gb = None
        return gx, gw, gb

    return _result("conv2d", np.asarray(out), (x, w, b), back)


def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0

    def back(g):
        return (g * mask,)

    return _result("relu", np.where(mask, x.data, 0.0), (x,), back)


def global_average_pool(x):
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError("global_average_pool", x.shape)
    n, h, w, c = x.shape

    def back(g):
        return (np.broadcast_to(g[:, None, None, :] / (h * w), x.shape).copy(),)

    return _result("global_average_pool", x.data.mean(axis=(1, 2)), (x,), back)


def flatten(x):
    x = _as_tensor(x)
    if x.data.ndim < 1:
        raise ShapeError("flatten", x.shape)
    shape = x.shape

    def back(g):
        return (g.reshape(shape),)

    return _result("flatten", x.data.reshape(shape[0], -1), (x,), back)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("add", a.shape, b.shape)

    def back(g):
        return g, g

    return _result("add", a.data + b.data, (a, b), back)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("mul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def back(g):
        return g * bd, g * ad

    return _result("mul", ad * bd, (a, b), back)


def scalar_scale(x, scale):
    x = _as_tensor(x)
    scale = float(scale)

    def back(g):
        return (g * scale,)

    return _result("scalar_scale", x.data * scale, (x,), back)


def total(x):
    """Sum of all elements, as a 0-d tensor."""
    x = _as_tensor(x)
    shape = x.shape

    def back(g):
        return (np.full(shape, float(g)),)

    return _result("sum", np.asarray(x.data.sum()), (x,), back)


def mean(x):
    x = _as_tensor(x)
    return scalar_scale(total(x), 1.0 / x.size)


def _stable_log_softmax(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(x):
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("softmax", x.shape)
    s = np.exp(_stable_log_softmax(x.data))

    def back(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _result("softmax", s, (x,), back)


def log_softmax(x):
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("log_softmax", x.shape)
    out = _stable_log_softmax(x.data)
    s = np.exp(out)

    def back(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return _result("log_softmax", out, (x,), back)


def mix(weights, members):
    """Weighted sum ``sum_k weights[k] * members[k]`` of same-shape tensors."""
    weights = _as_tensor(weights)
    members = [_as_tensor(m) for m in members]
    if weights.data.ndim != 1 or weights.shape[0] != len(members) or not members:
        raise ShapeError("mix", weights.shape, (len(members),))
    shape = members[0].shape
    for m in members[1:]:
        if m.shape != shape:
            raise ShapeError("mix", shape, m.shape)
    wd = weights.data
    datas = [m.data for m in members]
    out = np.zeros(shape)
    for wk, d in zip(wd, datas):
        out = out + wk * d

    def back(g):
        gw = np.array([np.sum(g * d) for d in datas]) if weights.requires_grad else None
        return (gw, *[g * wk for wk in wd])

    return _result("mix", out, (weights, *members), back)


_KINDS = {
    "affine": affine,
    "conv2d": conv2d,
    "relu": relu,
    "global_average_pool": global_average_pool,
    "flatten": flatten,
    "add": add,
    "mul": mul,
    "scalar_scale": scalar_scale,
    "sum": total,
    "mean": mean,
    "softmax": softmax,
    "log_softmax": log_softmax,
}


def forward_op(kind, inputs, **attrs):
    """Dispatch by name: ``forward_op("scalar_scale", [x], scale=2.0)``."""
    if kind == "mix":
        return mix(inputs[0], inputs[1:])
    try:
        fn = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **attrs)


OP_KINDS = tuple(_KINDS) + ("mix",)
