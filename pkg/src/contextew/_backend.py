"""Kernel backend selection.

The compiled extension is used when it imports; setting the environment
variable ``CONTEXTEW_PURE_PYTHON=1`` forces the pure-Python fallback.
"""
import os

from . import _fallback

if os.environ.get("CONTEXTEW_PURE_PYTHON", "") not in ("", "0"):
    kernels = _fallback
    COMPILED = False
else:
    try:
        from . import _kernels as kernels
        COMPILED = True
    except ImportError:  # pragma: no cover - depends on the build
        kernels = _fallback
        COMPILED = False

KernelError = (_fallback.KernelError,) if not COMPILED else (kernels.KernelError, _fallback.KernelError)

__all__ = ["kernels", "COMPILED", "KernelError"]
