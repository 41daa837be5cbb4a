"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
implementations are used. ``DLMLAB_BACKEND=python`` forces the fallback.
Both backends agree to rounding (about 1e-12 relative), and each is
deterministic on its own, but they are not bit-identical to each other.
"""
import os

from dlmlab import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("DLMLAB_BACKEND", "").lower() != "python":
    try:
        from dlmlab import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

logsumexp_rows = _impl.logsumexp_rows
conv2d_forward = _impl.conv2d_forward
conv2d_grad_weight = _impl.conv2d_grad_weight
conv2d_grad_input = _impl.conv2d_grad_input

__all__ = [
    "BACKEND",
    "logsumexp_rows",
    "conv2d_forward",
    "conv2d_grad_weight",
    "conv2d_grad_input",
]
