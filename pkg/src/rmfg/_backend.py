"""Kernel backend selection.

The compiled extension is used when importable; setting the environment
variable ``RMFG_PURE_PYTHON=1`` forces the numpy fallback.
"""
import importlib
import os

__all__ = ["BACKEND", "kernels", "load"]


def load(name):
    """Return the kernel module for ``name`` (``"cython"`` or ``"python"``)."""
    if name == "cython":
        return importlib.import_module("rmfg._kernels")
    if name == "python":
        return importlib.import_module("rmfg._kernels_py")
    raise ValueError(f"unknown backend {name!r}")


if os.environ.get("RMFG_PURE_PYTHON", "").strip() not in ("", "0"):
    kernels = load("python")
    BACKEND = "python"
else:
    try:
        kernels = load("cython")
        BACKEND = "cython"
    except ImportError:
        kernels = load("python")
        BACKEND = "python"
