# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Signatures and semantics match ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isfinite
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef inline void _smooth(double z, double* hz, double* hp) noexcept nogil:
    cdef double c = z, c2, w
    if c <= -1.0:
        hz[0] = 0.0
        hp[0] = 0.0
        return
    if c >= 1.0:
        hz[0] = 1.0
        hp[0] = 0.0
        return
    c2 = c * c
    w = 1.0 - c2
    hz[0] = 0.5 + 0.9375 * c * (1.0 - c2 * (2.0 / 3.0 - 0.2 * c2))
    hp[0] = 0.9375 * w * w


cdef void _accumulate(const double[:, ::1] x, const double[::1] y,
                      const double[::1] beta0, double h, double tau,
                      Py_ssize_t lo, Py_ssize_t hi,
                      double[::1] u, double[:, ::1] v, double* xx) noexcept nogil:
    # adds rows [lo, hi) into u and the upper triangle of v (and xx if given)
    cdef Py_ssize_t i, a, b, pp = x.shape[1]
    cdef double r, hz, hp, coef, w, xa
    for i in range(lo, hi):
        r = y[i]
        for a in range(pp):
            r -= x[i, a] * beta0[a]
        _smooth(r / h, &hz, &hp)
        coef = hz + (tau - 1.0) + (y[i] / h) * hp
        for a in range(pp):
            u[a] += x[i, a] * coef
        if hp > 0.0:
            w = hp / h
            for a in range(pp):
                xa = w * x[i, a]
                for b in range(a, pp):
                    v[a, b] += xa * x[i, b]
        if xx != NULL:
            for a in range(pp):
                xa = x[i, a]
                for b in range(a, pp):
                    xx[a * pp + b] += xa * x[i, b]


cdef void _mirror(double[:, ::1] v) noexcept nogil:
    cdef Py_ssize_t a, b, pp = v.shape[0]
    for a in range(pp):
        for b in range(a + 1, pp):
            v[b, a] = v[a, b]


def local_stats(const double[:, ::1] design, const double[::1] y,
                const double[::1] beta0, double h, double tau):
    cdef Py_ssize_t pp = design.shape[1]
    u = np.zeros(pp)
    v = np.zeros((pp, pp))
    cdef double[::1] uv = u
    cdef double[:, ::1] vv = v
    with nogil:
        _accumulate(design, y, beta0, h, tau, 0, design.shape[0], uv, vv, NULL)
        _mirror(vv)
    return u, v


cdef int _cg(const double* v, const double* u, double* x, Py_ssize_t n,
             double tol, int max_iter, double* work, int* iters_out,
             double* res_out) noexcept nogil:
    # work holds 3n doubles: r, d, vd. Returns 1 on convergence.
    cdef double* r = work
    cdef double* d = work + n
    cdef double* vd = work + 2 * n
    cdef Py_ssize_t i, j
    cdef double unorm = 0.0, rr = 0.0, rr_new, dvd, alpha, gamma, s, thresh
    cdef int k = 0
    for i in range(n):
        unorm += u[i] * u[i]
    thresh = tol * (1.0 + sqrt(unorm))
    for i in range(n):
        s = u[i]
        for j in range(n):
            s -= v[i * n + j] * x[j]
        r[i] = s
        d[i] = s
        rr += s * s
    if sqrt(rr) <= thresh:
        iters_out[0] = 0
        res_out[0] = sqrt(rr)
        return 1
    while k < max_iter:
        k += 1
        dvd = 0.0
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += v[i * n + j] * d[j]
            vd[i] = s
            dvd += d[i] * s
        if not dvd > 0.0:
            break
        alpha = rr / dvd
        rr_new = 0.0
        for i in range(n):
            x[i] += alpha * d[i]
            r[i] -= alpha * vd[i]
            rr_new += r[i] * r[i]
        if sqrt(rr_new) <= thresh:
            # confirm on the true residual, restart from it if needed
            rr_new = 0.0
            for i in range(n):
                s = u[i]
                for j in range(n):
                    s -= v[i * n + j] * x[j]
                r[i] = s
                d[i] = s
                rr_new += s * s
            if sqrt(rr_new) <= thresh:
                iters_out[0] = k
                res_out[0] = sqrt(rr_new)
                return 1
            rr = rr_new
            continue
        gamma = rr_new / rr
        for i in range(n):
            d[i] = r[i] + gamma * d[i]
        rr = rr_new
    rr = 0.0
    for i in range(n):
        s = u[i]
        for j in range(n):
            s -= v[i * n + j] * x[j]
        rr += s * s
    iters_out[0] = k
    res_out[0] = sqrt(rr)
    return 1 if sqrt(rr) <= thresh else 0


def cg(v, u, x0, double tol, int max_iter):
    cdef double[:, ::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef double[::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    x = np.array(x0, dtype=np.float64, copy=True)
    cdef double[::1] xv = x
    cdef Py_ssize_t n = uu.shape[0]
    cdef int iters = 0, ok
    cdef double res = 0.0
    cdef double* work = <double*> malloc(3 * max(n, 1) * sizeof(double))
    if work == NULL:
        raise MemoryError()
    try:
        with nogil:
            ok = _cg(&vv[0, 0] if n else NULL, &uu[0] if n else NULL,
                     &xv[0] if n else NULL, n, tol, max_iter, work, &iters, &res)
    finally:
        free(work)
    return x, iters, res, bool(ok)


def online_block(const double[:, ::1] design, const double[::1] y,
                 const double[::1] beta_ref, double h, double tau,
                 const double[::1] carried_u, const double[:, ::1] carried_v,
                 double[::1] live_u, double[:, ::1] live_v, double[:, ::1] xx,
                 double[::1] beta_cur, long j_start, long solve_every,
                 double tol, int max_iter):
    cdef Py_ssize_t n = design.shape[0], pp = design.shape[1]
    cdef Py_ssize_t i, a, b, lo = 0
    cdef long j
    cdef int solves = 0, failures = 0, total_iters = 0, iters = 0, ok
    cdef double res = 0.0
    cdef bint finite
    if n == 0:
        return 0, 0, 0
    cdef double* buf = <double*> malloc((pp * pp + pp + pp + 3 * pp + pp * pp) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double* sv = buf                      # combined V
    cdef double* su = buf + pp * pp            # combined U
    cdef double* sx = su + pp                  # trial solution
    cdef double* work = sx + pp
    cdef double* xxu = work + 3 * pp           # upper-triangle xx increments
    try:
        with nogil:
            for a in range(pp * pp):
                xxu[a] = 0.0
            # live_v and xx are kept full-symmetric between calls; accumulate
            # into their upper triangles and mirror at each solve point.
            for i in range(n):
                _accumulate(design, y, beta_ref, h, tau, i, i + 1, live_u, live_v, xxu)
                j = j_start + i
                if j % solve_every != 0 and i != n - 1:
                    continue
                _mirror(live_v)
                for a in range(pp):
                    su[a] = carried_u[a] + live_u[a]
                    sx[a] = beta_cur[a]
                    for b in range(pp):
                        sv[a * pp + b] = carried_v[a, b] + live_v[a, b]
                ok = _cg(sv, su, sx, pp, tol, max_iter, work, &iters, &res)
                solves += 1
                total_iters += iters
                finite = True
                for a in range(pp):
                    if not isfinite(sx[a]):
                        finite = False
                if ok and finite:
                    for a in range(pp):
                        beta_cur[a] = sx[a]
                else:
                    failures += 1
            for a in range(pp):
                for b in range(a, pp):
                    xx[a, b] += xxu[a * pp + b]
                    if b != a:
                        xx[b, a] = xx[a, b]
    finally:
        free(buf)
    return solves, failures, total_iters
