"""Kernel backend selection.

The compiled core is used when it imports; ``BRSTABLE_BACKEND=python``
forces the pure-Python kernels.
"""
import os

from . import _pycore

python_kernels = _pycore

try:
    from . import _core as compiled_kernels
except ImportError:  # extension not built
    compiled_kernels = None

if compiled_kernels is not None and os.environ.get("BRSTABLE_BACKEND", "").lower() != "python":
    kernels = compiled_kernels
else:
    kernels = python_kernels

BACKEND = kernels.BACKEND
