"""Kernel backend selection.

The compiled Cython core is preferred when its extension module is
importable; otherwise the numpy implementation is used. Set
``TASTEEG_KERNELS=python`` or ``TASTEEG_KERNELS=compiled`` to force one.
"""
import ctypes
import os

from . import kernels_numpy


def available_backends():
    """Importable kernel backends keyed by name."""
    backends = {"numpy": kernels_numpy}
    try:
        from . import _kernels
        backends["compiled"] = _kernels
    except ImportError:
        pass
    return backends


def _select():
    backends = available_backends()
    forced = os.environ.get("TASTEEG_KERNELS", "").strip().lower()
    if forced in ("python", "numpy"):
        return backends["numpy"]
    if forced == "compiled":
        if "compiled" not in backends:
            raise ImportError(
                "TASTEEG_KERNELS=compiled but tasteeg._kernels is not built; "
                "run `pip install -e . --no-build-isolation`")
        return backends["compiled"]
    if forced:
        raise ValueError(f"unknown TASTEEG_KERNELS value: {forced!r}")
    return backends.get("compiled", backends["numpy"])


_impl = _select()

BACKEND = _impl.BACKEND
conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2d_forward = _impl.maxpool2d_forward
maxpool2d_backward = _impl.maxpool2d_backward

_malloc_tuned = False


def tune_malloc():
    """Keep large freed blocks in the heap instead of returning them to the OS.

    Training reallocates ~100 MB of activation buffers per step; without this
    glibc mmaps/munmaps them every time and the page faults dominate the
    profile. No-op off glibc or when TASTEEG_NO_MALLOC_TUNING is set.
    """
    global _malloc_tuned
    if _malloc_tuned or os.environ.get("TASTEEG_NO_MALLOC_TUNING"):
        return
    _malloc_tuned = True
    try:
        libc = ctypes.CDLL("libc.so.6")
        m_trim_threshold, m_mmap_threshold = -1, -3
        libc.mallopt(m_mmap_threshold, 1 << 30)
        libc.mallopt(m_trim_threshold, 1 << 30)
    except (OSError, AttributeError):
        pass
