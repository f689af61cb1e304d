"""Conjugate-gradient solver for the symmetric positive-definite system V b = U."""
from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .errors import DimensionMismatch, NotConverged, NotSymmetric


class CGResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float


def cg_solve(v, u, tol: float = 1e-10, max_iter: Optional[int] = None, x0=None,
             full_output: bool = False):
    """Solve ``v x = u`` by plain (unpreconditioned) conjugate gradients.

    Iterates residual/direction updates with the Fletcher-Reeves ratio until
    ``||v x - u||_2 <= tol * (1 + ||u||_2)``.

    Parameters
    ----------
    v : (d, d) array, symmetric within 1e-10 relative.
    u : (d,) array.
    tol : relative residual tolerance.
    max_iter : iteration budget, default ``10 * d``.
    x0 : starting point, default zeros.
    full_output : also return iteration count and final residual.

    Raises
    ------
    NotSymmetric
        ``v`` is not square-symmetric.
    NotConverged
        The budget ran out before the tolerance was met.
    """
    v = np.ascontiguousarray(v, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64).reshape(-1)
    d = u.shape[0]
    if v.shape != (d, d):
        raise DimensionMismatch(f"matrix shape {v.shape} does not match vector length {d}")
    scale = float(np.max(np.abs(v))) if v.size else 0.0
    if v.size and np.max(np.abs(v - v.T)) > 1e-10 * max(scale, 1e-300):
        raise NotSymmetric("matrix is not symmetric")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter is None:
        max_iter = 10 * max(d, 1)
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=np.float64).reshape(d)
    if d == 0:
        return CGResult(np.zeros(0), 0, 0.0) if full_output else np.zeros(0)
    x, iters, res, ok = kernels.cg(v, u, x0, float(tol), int(max_iter))
    if not ok or not np.all(np.isfinite(x)):
        raise NotConverged(iters, res)
    if full_output:
        return CGResult(x, iters, res)
    return x
