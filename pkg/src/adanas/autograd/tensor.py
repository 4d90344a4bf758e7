"""Dense float64 tensors with a reverse-mode tape.

Each op result keeps references to its inputs and a closure that pushes the
upstream gradient back to them. ``backward`` walks that graph once in reverse
topological order and then releases it.
"""
from __future__ import annotations

import numpy as np


class AutogradError(Exception):
    pass


class ShapeError(AutogradError, ValueError):
    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        desc = " vs ".join(str(list(s)) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {desc}")


class NumericError(AutogradError, ArithmeticError):
    pass


class TapeError(AutogradError, RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={list(self.shape)}, requires_grad={self.requires_grad})"

    def backward(self):
        backward(self)


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Populate ``.grad`` of every tensor that requires grad and reaches ``loss``.

    Leaf gradients accumulate; call ``zero_grad`` between steps. The graph is
    released afterwards, so a second call on the same loss raises TapeError.
    """
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    if loss._consumed:
        raise TapeError("tape already consumed by a previous backward()")
    if not loss.requires_grad:
        loss._consumed = True
        return
    order = _toposort(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            _accumulate(node, g)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    for node in order:
        node._parents = ()
        node._backward = None
    loss._consumed = True
