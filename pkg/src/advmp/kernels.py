"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy twin in
``_kernels_py`` is used. Set ``ADVMP_PURE_PYTHON=1`` to force the fallback.
"""
import importlib
import os

from . import _kernels_py

BACKENDS = ("cython", "python")


def load_backend(name):
    """Return the kernel module for ``name`` (``"cython"`` or ``"python"``)."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        return importlib.import_module("advmp._kernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends():
    names = []
    for name in BACKENDS:
        try:
            load_backend(name)
        except ImportError:
            continue
        names.append(name)
    return names


def _select():
    if os.environ.get("ADVMP_PURE_PYTHON", "") not in ("", "0"):
        return "python", _kernels_py
    try:
        return "cython", load_backend("cython")
    except ImportError:
        return "python", _kernels_py


BACKEND, _impl = _select()

project_rows = _impl.project_rows
ascent_rows = _impl.ascent_rows
pgd_linreg = _impl.pgd_linreg
