"""Conv2d kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``ADANAS_BACKEND=python`` to force the fallback.
"""
import os

from adanas.autograd import _pykernels

_BACKENDS = {"python": _pykernels}

try:
    from adanas.autograd import _ckernels
except ImportError:  # extension not built
    _ckernels = None
else:
    _BACKENDS["compiled"] = _ckernels


def available():
    return sorted(_BACKENDS)


def get_backend(name):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}; have {available()}") from None


def _default():
    forced = os.environ.get("ADANAS_BACKEND")
    if forced:
        return forced
    return "compiled" if _ckernels is not None else "python"


BACKEND = _default()
_impl = get_backend(BACKEND)

conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_weight = _impl.conv2d_backward_weight
