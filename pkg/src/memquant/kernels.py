"""Backend selection for the hot loops.

The compiled extension ``memquant._ckernels`` is used when it imports;
otherwise the NumPy fallback in ``memquant._pykernels``. Setting
``MEMQUANT_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _pykernels

python_backend = _pykernels
compiled_backend = None

if not os.environ.get("MEMQUANT_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if _active is compiled_backend else "python"


def local_stats(design, y, beta0, h, tau):
    return _active.local_stats(design, y, beta0, h, tau)


def cg(v, u, x0, tol, max_iter):
    return _active.cg(v, u, x0, tol, max_iter)


def online_block(*args):
    return _active.online_block(*args)


def get_backend(name=None):
    """Return a kernel module by name (``"cython"``, ``"python"``) or the active one."""
    if name is None:
        return _active
    if name == "python":
        return python_backend
    if name == "cython":
        if compiled_backend is None:
            raise ImportError("compiled kernels are not available")
        return compiled_backend
    raise ValueError(f"unknown backend {name!r}")


def use_backend(name):
    """Switch the active backend for this process; returns the previous name."""
    global _active, BACKEND
    prev = BACKEND
    _active = get_backend(name)
    BACKEND = name
    return prev
