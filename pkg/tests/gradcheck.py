"""Central finite-difference gradient checks, independent of the tape."""
import numpy as np

from adanas.autograd import ops
from adanas.autograd.tensor import Tensor

H = 1e-5


def numeric_grad(f, arrays, which, h=H):
    base = [a.copy() for a in arrays]
    g = np.zeros_like(base[which])
    it = np.nditer(base[which], flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        plus = [a.copy() for a in base]
        minus = [a.copy() for a in base]
        plus[which][idx] += h
        minus[which][idx] -= h
        g[idx] = (f(*plus) - f(*minus)) / (2 * h)
    return g


def projected(op, proj):
    """Scalar function ``sum(op(*inputs) * proj)`` evaluated with plain arrays."""
    def f(*arrays):
        return float(np.sum(op(*[Tensor(a) for a in arrays]).data * proj))
    return f


def analytic_grads(op, arrays, proj):
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*tensors)
    loss = ops.total(ops.mul(out, Tensor(proj)))
    loss.backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def max_rel_error(op, arrays, rng):
    out = op(*[Tensor(a) for a in arrays])
    proj = rng.standard_normal(out.shape)
    f = projected(op, proj)
    worst = 0.0
    for i, g in enumerate(analytic_grads(op, arrays, proj)):
        num = numeric_grad(f, arrays, i)
        err = np.abs(g - num) / np.maximum(1.0, np.abs(g))
        worst = max(worst, float(err.max()))
    return worst


def _away_from_zero(rng, shape):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < 0.05, np.sign(x) * 0.05 + x, x)


def random_case(kind, rng):
    """``(op, arrays)`` for a random small instance of ``kind`` (each tensor <= 64 elements)."""
    n = int(rng.integers(1, 4))
    if kind == "affine":
        i, o = rng.integers(1, 5, size=2)
        return ops.affine, [rng.standard_normal((n, i)), rng.standard_normal((i, o)), rng.standard_normal(o)]
    if kind == "conv2d":
        h, w = rng.integers(1, 4, size=2)
        ci, co = rng.integers(1, 3, size=2)
        return ops.conv2d, [rng.standard_normal((n, h, w, ci)), rng.standard_normal((3, 3, ci, co)),
                            rng.standard_normal(co)]
    if kind == "relu":
        return ops.relu, [_away_from_zero(rng, (n, int(rng.integers(1, 8))))]
    if kind == "global_average_pool":
        return ops.global_average_pool, [rng.standard_normal((n, *rng.integers(1, 4, size=3)))]
    if kind == "flatten":
        return ops.flatten, [rng.standard_normal((n, *rng.integers(1, 4, size=2)))]
    if kind in ("add", "mul"):
        shape = (n, int(rng.integers(1, 8)))
        return getattr(ops, kind), [rng.standard_normal(shape), rng.standard_normal(shape)]
    if kind == "scalar_scale":
        s = float(rng.uniform(-3, 3))
        return (lambda x: ops.scalar_scale(x, s)), [rng.standard_normal((n, int(rng.integers(1, 8))))]
    if kind == "sum":
        return ops.total, [rng.standard_normal((n, int(rng.integers(1, 8))))]
    if kind == "mean":
        return ops.mean, [rng.standard_normal((n, int(rng.integers(1, 8))))]
    if kind in ("softmax", "log_softmax"):
        return getattr(ops, kind), [2 * rng.standard_normal((n, int(rng.integers(2, 6))))]
    if kind == "mix":
        k = int(rng.integers(1, 4))
        shape = (n, int(rng.integers(2, 5)))
        arrays = [rng.standard_normal(k)] + [rng.standard_normal(shape) for _ in range(k)]
        return (lambda w, *ms: ops.mix(w, list(ms))), arrays
    raise ValueError(kind)
