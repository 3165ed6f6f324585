"""Kernel backend selection.

The convolution kernels exist twice: a compiled Cython extension and a pure
numpy fallback. The compiled one is picked when importable; set
``VOXELNAS_BACKEND=python`` or ``VOXELNAS_BACKEND=compiled`` to force a choice.
"""

import os

from ..errors import ArgumentError
from . import _kernels_py

try:
    from . import _kernels_cy
except ImportError:
    _kernels_cy = None

_BACKENDS = {"python": _kernels_py, "compiled": _kernels_cy}


def _select():
    forced = os.environ.get("VOXELNAS_BACKEND", "").strip().lower()
    if not forced:
        return ("compiled", _kernels_cy) if _kernels_cy is not None else ("python", _kernels_py)
    if forced not in _BACKENDS:
        raise ArgumentError(f"unknown VOXELNAS_BACKEND {forced!r} (use 'python' or 'compiled')")
    if _BACKENDS[forced] is None:
        raise ImportError("VOXELNAS_BACKEND=compiled but the extension is not built")
    return forced, _BACKENDS[forced]


_ACTIVE_NAME, _ACTIVE = _select()


def active_backend():
    """Name of the backend in use: 'compiled' or 'python'."""
    return _ACTIVE_NAME


def available_backends():
    return [name for name, mod in _BACKENDS.items() if mod is not None]


def get_backend(name):
    """Return the kernel module for `name`, or None if not built."""
    if name not in _BACKENDS:
        raise ArgumentError(f"unknown backend {name!r}")
    return _BACKENDS[name]


conv3d_forward = _ACTIVE.conv3d_forward
conv3d_backward_input = _ACTIVE.conv3d_backward_input
conv3d_backward_weight = _ACTIVE.conv3d_backward_weight
depthwise_forward = _ACTIVE.depthwise_forward
depthwise_backward_input = _ACTIVE.depthwise_backward_input
depthwise_backward_weight = _ACTIVE.depthwise_backward_weight
