"""Classical (unsmoothed) quantile regression on one in-memory batch.

:func:`solve_qr` runs in two phases:

1. Continuation on the convolution-smoothed check loss
   ``(tau - 1) r + h G(r / h)`` (``G`` = integral of the biweight CDF).
   It is convex, its Hessian is the same ``sum x x' H'(r/h) / h`` matrix the
   LEQR step builds, and damped Newton converges quickly while ``h`` is
   halved towards a floor.
2. Exact finish by edge descent over the vertices of the LP: start from the
   ``p + 1`` observations with the smallest residuals, move along the edge
   with the most negative directional derivative to the minimising
   breakpoint, swap bases, repeat. Optimality is certified by the KKT
   multipliers lying in ``[tau - 1, tau]``.

Degenerate vertices whose certificate cannot be settled locally fall back to
the HiGHS LP solver in SciPy.
"""
from __future__ import annotations

import itertools
import math
from typing import NamedTuple

import numpy as np
from scipy import optimize, sparse

from .core import Batch, as_batch, quantile_level, smooth_h, smooth_h_integral, smooth_h_prime
from .errors import NoConvergence, QuantileOutOfRange, RankDeficient, TooLarge

__all__ = ["solve_qr", "qr_vertex_oracle", "sample_quantile", "quantile_index", "QRInfo"]


class QRInfo(NamedTuple):
    objective: float
    newton_steps: int
    pivots: int
    method: str  # "vertex" or "lp"


def _rho(r, tau):
    return r * (tau - (r <= 0))


def _smoothed_loss(r, h, tau):
    return float(np.sum((tau - 1.0) * r + h * smooth_h_integral(r / h)))


def _smoothed_start(X, y, tau, h_floor_rel):
    """Least squares, intercept shifted to the tau-quantile, then continuation."""
    n, pp = X.shape
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    r = y - X @ beta
    beta[0] += np.quantile(r, tau)
    r = y - X @ beta
    scale = float(np.median(np.abs(r))) * 1.4826
    if not scale > 0.0:
        scale = float(np.mean(np.abs(r)))
    if not scale > 0.0:
        return beta, 0
    h = scale
    h_min = scale * h_floor_rel
    steps = 0
    while True:
        for _ in range(30):
            z = r / h
            g = X.T @ (smooth_h(z) + (tau - 1.0))
            w = smooth_h_prime(z) / h
            active = w > 0.0
            xa = X[active]
            hess = xa.T @ (xa * w[active, None])
            hess[np.diag_indices(pp)] += 1e-8 * (np.trace(hess) / pp + 1e-300)
            try:
                step = np.linalg.solve(hess, g)
            except np.linalg.LinAlgError:
                break
            f0 = _smoothed_loss(r, h, tau)
            slope = float(g @ step)
            t = 1.0
            while t > 1e-8:
                r_new = r - t * (X @ step)
                if _smoothed_loss(r_new, h, tau) <= f0 - 1e-4 * t * slope:
                    break
                t *= 0.5
            else:
                break
            beta = beta + t * step
            r = r_new
            steps += 1
            if t * np.linalg.norm(step) <= 1e-10 * (1.0 + np.linalg.norm(beta)):
                break
        if h <= h_min:
            break
        if np.count_nonzero(np.abs(r) < h / 2.0) < 2 * pp:
            break
        h = max(h / 2.0, h_min)
    return beta, steps


def _initial_basis(X, r):
    """Greedy: rows by increasing |r| that keep the selection linearly independent."""
    n, pp = X.shape
    chosen = []
    q = np.zeros((0, pp))
    for i in np.argsort(np.abs(r), kind="stable"):
        x = X[i]
        nx = np.linalg.norm(x)
        if nx == 0.0:
            continue
        res = x - q.T @ (q @ x)
        nr = np.linalg.norm(res)
        if nr > 1e-9 * nx:
            chosen.append(int(i))
            q = np.vstack([q, res / nr])
            if len(chosen) == pp:
                break
    if len(chosen) < pp:
        raise RankDeficient("design matrix is rank deficient")
    return np.array(chosen)


def _kkt_feasible(X, zero_idx, g, tau):
    """Is there ``a`` in ``[tau-1, tau]^Z`` with ``X_Z' a = -g``?"""
    res = optimize.linprog(
        np.zeros(len(zero_idx)),
        A_eq=X[zero_idx].T,
        b_eq=-g,
        bounds=[(tau - 1.0, tau)] * len(zero_idx),
        method="highs",
    )
    return res.status == 0


def _vertex_descent(X, y, tau, beta_start, max_pivots):
    n, pp = X.shape
    basis = _initial_basis(X, y - X @ beta_start)
    yscale = max(1.0, float(np.max(np.abs(y))))
    ztol = 1e-11 * yscale
    in_basis = np.zeros(n, dtype=bool)
    obj_prev = math.inf
    for pivots in range(max_pivots + 1):
        xb = X[basis]
        try:
            binv = np.linalg.inv(xb)
        except np.linalg.LinAlgError:
            return None, pivots
        beta = binv @ y[basis]
        r = y - X @ beta
        r[basis] = 0.0
        obj = float(np.sum(_rho(r, tau)))
        if obj > obj_prev * (1 + 1e-12) + 1e-12 * yscale:
            return None, pivots  # numerical trouble, let the LP settle it
        obj_prev = obj
        w = X @ binv
        w[basis] = np.eye(pp)
        in_basis[:] = False
        in_basis[basis] = True
        nz = (~in_basis) & (np.abs(r) > ztol)
        zz = np.flatnonzero((~in_basis) & ~nz)
        psi = np.where(r[nz] > 0, tau, tau - 1.0)
        a = w[nz].T @ psi
        d_plus = a + tau
        d_minus = -a + (1.0 - tau)
        if zz.size:
            wz = w[zz]
            d_plus = d_plus + np.sum(_rho(wz, tau), axis=0)
            d_minus = d_minus + np.sum(_rho(-wz, tau), axis=0)
        dtol = 1e-10 * (1.0 + np.abs(a))
        cand = np.concatenate([d_plus, d_minus])
        k = int(np.argmin(cand))
        if cand[k] >= -dtol[k % pp]:
            # certificate: multipliers of the zero-residual set
            if zz.size == 0:
                return beta, pivots
            zero_idx = np.concatenate([basis, zz])
            g = X[nz].T @ psi
            if _kkt_feasible(X, zero_idx, g, tau):
                return beta, pivots
            return None, pivots
        j, s = k % pp, (1.0 if k < pp else -1.0)
        c = -s * w[:, j]
        rc = r * c
        mask = nz & (rc > 0)
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return None, pivots
        t = r[idx] / c[idx]
        order = np.argsort(t, kind="stable")
        slope = cand[k] + np.cumsum(np.abs(c[idx][order]))
        hit = np.flatnonzero(slope >= 0.0)
        if hit.size == 0:
            return None, pivots
        basis = basis.copy()
        basis[j] = idx[order[hit[0]]]
    return None, max_pivots


def _solve_lp(X, y, tau):
    n, pp = X.shape
    eye = sparse.identity(n, format="csr")
    a_eq = sparse.hstack([sparse.csr_matrix(X), eye, -eye], format="csr")
    cost = np.concatenate([np.zeros(pp), np.full(n, tau), np.full(n, 1.0 - tau)])
    bounds = [(None, None)] * pp + [(0, None)] * (2 * n)
    res = optimize.linprog(cost, A_eq=a_eq, b_eq=y, bounds=bounds, method="highs")
    if res.status != 0:
        raise NoConvergence(f"LP solver failed: {res.message}")
    return res.x[:pp]


def solve_qr(batch, tau, *, max_pivots: int | None = None, h_floor: float | None = None,
             full_output: bool = False):
    """Exact minimiser of ``sum rho_tau(y_i - x_i' beta)`` over one batch.

    Parameters
    ----------
    batch : Batch or iterable of Observation
    tau : quantile level in (0, 1)
    max_pivots : vertex-descent budget before the LP fallback
        (default ``50 (p + 1) + n``).
    h_floor : relative floor of the continuation bandwidth
        (default ``max(1e-3, n^{-3/4})``).
    full_output : also return a :class:`QRInfo`.

    Raises
    ------
    RankDeficient
        The design (with intercept) does not have full column rank.
    NoConvergence
        Neither the vertex descent nor the LP fallback produced a solution.
    """
    batch = as_batch(batch)
    tau = quantile_level(tau)
    X, y = batch.design, batch.y
    n, pp = X.shape
    if n < pp or np.linalg.matrix_rank(X) < pp:
        raise RankDeficient(f"design with {n} rows is rank deficient for {pp} coefficients")
    if h_floor is None:
        h_floor = max(1e-3, n ** -0.75)
    if max_pivots is None:
        max_pivots = 50 * pp + n
    start, steps = _smoothed_start(X, y, tau, h_floor)
    beta, pivots = _vertex_descent(X, y, tau, start, max_pivots)
    method = "vertex"
    if beta is None:
        beta = _solve_lp(X, y, tau)
        method = "lp"
    if full_output:
        obj = float(np.sum(_rho(y - X @ beta, tau)))
        return beta, QRInfo(obj, steps, pivots, method)
    return beta


def qr_vertex_oracle(batch, tau) -> np.ndarray:
    """Brute-force QR: best exact interpolant over all ``(p + 1)``-subsets.

    Only for tiny problems (``n <= 30``, ``p <= 3``); raises ``TooLarge``
    otherwise. Ill-posed subsets (condition number above 1e12) are skipped.
    """
    batch = as_batch(batch)
    tau = quantile_level(tau)
    X, y = batch.design, batch.y
    n, pp = X.shape
    if n > 30 or pp - 1 > 3:
        raise TooLarge(f"vertex oracle limited to n <= 30, p <= 3 (got n={n}, p={pp - 1})")
    best, best_obj = None, math.inf
    for combo in itertools.combinations(range(n), pp):
        xb = X[list(combo)]
        if np.linalg.cond(xb) > 1e12:
            continue
        beta = np.linalg.solve(xb, y[list(combo)])
        obj = float(np.sum(_rho(y - X @ beta, tau)))
        if obj < best_obj:
            best, best_obj = beta, obj
    if best is None:
        raise RankDeficient("no well-posed interpolating subset")
    return best


def quantile_index(m: int, tau) -> tuple[int, float]:
    """``(j, gamma)`` for the interpolated order statistic of a size-``m`` sample.

    ``j = floor(tau (m + 1))`` and ``gamma = tau (m + 1) - j``; when
    ``tau (m + 1)`` is an integer (to 1e-9) ``gamma`` is exactly zero and
    ``Y_(j+1)`` is not needed.
    """
    tau = quantile_level(tau)
    if m < 1:
        raise QuantileOutOfRange("empty sample")
    pos = tau * (m + 1)
    if abs(pos - round(pos)) < 1e-9:
        pos = float(round(pos))
    j = int(math.floor(pos))
    gamma = pos - j
    if j < 1 or (gamma > 0.0 and j + 1 > m) or j > m:
        raise QuantileOutOfRange(f"tau={tau} is too extreme for a sample of size {m}")
    return j, gamma


def sample_quantile(values, tau) -> float:
    """Interpolated order statistic ``(1 - g) Y_(j) + g Y_(j+1)`` (see :func:`quantile_index`)."""
    ys = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    j, gamma = quantile_index(ys.shape[0], tau)
    if gamma == 0.0:
        return float(ys[j - 1])
    return float((1.0 - gamma) * ys[j - 1] + gamma * ys[j])
