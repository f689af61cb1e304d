"""NumPy implementations of the hot kernels.

These are the reference semantics; ``_ckernels.pyx`` mirrors each function
signature for signature. All arrays are float64; ``design`` includes the
intercept column.
"""
import numpy as np

_C15_16 = 0.9375


def _smooth(z):
    c = np.clip(z, -1.0, 1.0)
    c2 = c * c
    w = 1.0 - c2
    hz = 0.5 + _C15_16 * c * (1.0 - c2 * (2.0 / 3.0 - 0.2 * c2))
    hz = np.where(z <= -1.0, 0.0, np.where(z >= 1.0, 1.0, hz))
    return hz, _C15_16 * w * w


def local_stats(design, y, beta0, h, tau):
    """Return ``(u, v)`` sums over the rows of ``design``."""
    pp = design.shape[1]
    if design.shape[0] == 0:
        return np.zeros(pp), np.zeros((pp, pp))
    r = y - design @ beta0
    hz, hp = _smooth(r / h)
    u = design.T @ (hz + (tau - 1.0) + (y / h) * hp)
    active = hp > 0.0
    xa = design[active]
    w = hp[active] / h
    v = xa.T @ (xa * w[:, None])
    v = 0.5 * (v + v.T)
    return u, v


def cg(v, u, x0, tol, max_iter):
    """Conjugate gradients on ``v x = u``.

    Returns ``(x, iterations, residual_norm, converged)``. The stopping test
    is ``||u - v x|| <= tol (1 + ||u||)`` on the true residual; if the
    recursive residual claims convergence but the true one disagrees the
    iteration restarts from the true residual.
    """
    x = np.array(x0, dtype=np.float64, copy=True)
    thresh = tol * (1.0 + float(np.sqrt(u @ u)))
    r = u - v @ x
    rr = float(r @ r)
    k = 0
    if np.sqrt(rr) <= thresh:
        return x, 0, float(np.sqrt(rr)), True
    d = r.copy()
    while k < max_iter:
        k += 1
        vd = v @ d
        dvd = float(d @ vd)
        if not dvd > 0.0:
            break
        alpha = rr / dvd
        x += alpha * d
        r -= alpha * vd
        rr_new = float(r @ r)
        if np.sqrt(rr_new) <= thresh:
            r = u - v @ x
            rr_new = float(r @ r)
            if np.sqrt(rr_new) <= thresh:
                return x, k, float(np.sqrt(rr_new)), True
            d = r.copy()
            rr = rr_new
            continue
        gamma = rr_new / rr
        d = r + gamma * d
        rr = rr_new
    res = float(np.linalg.norm(u - v @ x))
    return x, k, res, bool(res <= thresh)


def online_block(design, y, beta_ref, h, tau, carried_u, carried_v,
                 live_u, live_v, xx, beta_cur, j_start, solve_every, tol, max_iter):
    """Stream rows of one interval through the running statistics.

    ``live_u``, ``live_v``, ``xx`` and ``beta_cur`` are updated in place.
    Row ``i`` carries stream index ``j = j_start + i``; the combined system is
    solved after rows with ``j % solve_every == 0`` and after the last row.
    A failed solve keeps the previous estimate. Returns
    ``(solves, failures, cg_iterations)``.
    """
    n = design.shape[0]
    solves = failures = iters = 0
    if n == 0:
        return 0, 0, 0
    j_end = j_start + n - 1
    # solve points, as positions within the block
    first = (-j_start) % solve_every
    stops = list(range(first, n, solve_every))
    if not stops or stops[-1] != n - 1:
        stops.append(n - 1)
    lo = 0
    for stop in stops:
        chunk = slice(lo, stop + 1)
        d = design[chunk]
        du, dv = local_stats(d, y[chunk], beta_ref, h, tau)
        live_u += du
        live_v += dv
        xx += d.T @ d
        lo = stop + 1
        x, k, _, ok = cg(carried_v + live_v, carried_u + live_u, beta_cur, tol, max_iter)
        solves += 1
        iters += k
        if ok and np.all(np.isfinite(x)):
            beta_cur[:] = x
        else:
            failures += 1
    assert lo == n and j_start + lo - 1 == j_end
    return solves, failures, iters
