# cython: language_level=3
"""Compiled kernels: row-wise ball projection, steepest ascent and the fused
linear-regression PGD loop. Semantics match ``_kernels_py`` exactly; only the
floating-point summation order may differ.
"""
import numpy as np

from libc.math cimport fabs, fmax, fmin, sqrt
from libc.stdlib cimport free, malloc

cdef enum:
    K_L1 = 0
    K_L2 = 1
    K_LINF = 2


cdef inline double _sign(double v) noexcept nogil:
    if v > 0.0:
        return 1.0
    if v < 0.0:
        return -1.0
    return 0.0


cdef void _project_row(double *v, Py_ssize_t d, int kind, double radius) noexcept nogil:
    cdef Py_ssize_t j, cnt, prev
    cdef double s, tau, a
    if radius <= 0.0:
        for j in range(d):
            v[j] = 0.0
        return
    if kind == K_LINF:
        for j in range(d):
            v[j] = fmin(fmax(v[j], -radius), radius)
    elif kind == K_L2:
        s = 0.0
        for j in range(d):
            s += v[j] * v[j]
        s = sqrt(s)
        if s > radius:
            for j in range(d):
                v[j] = v[j] * (radius / s)
    else:
        s = 0.0
        for j in range(d):
            s += fabs(v[j])
        if s <= radius:
            return
        # Michelot: shrink the active set until the threshold stops moving.
        cnt = d
        tau = (s - radius) / cnt
        while True:
            prev = cnt
            s = 0.0
            cnt = 0
            for j in range(d):
                a = fabs(v[j])
                if a > tau:
                    s += a
                    cnt += 1
            if cnt >= prev:
                # The count only shrinks in exact arithmetic; a rounding tie at
                # the threshold can flip one coordinate back in and cycle.
                break
            if cnt == 0:
                # Rounding put the threshold at the largest magnitude: the
                # ball is numerically a point, so every coordinate goes to 0.
                break
            tau = (s - radius) / cnt
        for j in range(d):
            a = fabs(v[j]) - tau
            if a > 0.0:
                v[j] = _sign(v[j]) * a
            else:
                v[j] = 0.0


cdef void _ascent_row(const double[::1] g, double[::1] out, int kind, double step,
                      int k, char *used) noexcept nogil:
    cdef Py_ssize_t d = g.shape[0]
    cdef Py_ssize_t j, best
    cdef int t
    cdef double s, m
    if kind == K_LINF:
        for j in range(d):
            out[j] = step * _sign(g[j])
    elif kind == K_L2:
        s = 0.0
        for j in range(d):
            s += g[j] * g[j]
        s = sqrt(s)
        for j in range(d):
            out[j] = step * g[j] / s if s > 0.0 else 0.0
    else:
        for j in range(d):
            out[j] = 0.0
            used[j] = 0
        for t in range(k):
            best = -1
            m = -1.0
            for j in range(d):
                if not used[j] and fabs(g[j]) > m:
                    m = fabs(g[j])
                    best = j
            used[best] = 1
            out[best] = step * _sign(g[best]) / k


def project_rows(D, int kind, double radius):
    cdef double[:, ::1] out = np.array(D, dtype=np.float64, order="C", copy=True)
    if out.ndim != 2:
        raise ValueError("project_rows expects a 2-D array")
    if kind < 0 or kind > 2:
        raise ValueError(f"unknown norm code {kind}")
    cdef Py_ssize_t n = out.shape[0], d = out.shape[1], i
    if d == 0:
        return np.asarray(out)
    with nogil:
        for i in range(n):
            _project_row(&out[i, 0], d, kind, radius)
    return np.asarray(out)


def ascent_rows(G, int kind, double step, int k):
    cdef const double[:, ::1] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef Py_ssize_t n = g.shape[0], d = g.shape[1], i
    if kind < 0 or kind > 2:
        raise ValueError(f"unknown norm code {kind}")
    if kind == K_L1 and (k < 1 or k > d):
        raise ValueError(f"top-k must satisfy 1 <= k <= {d}, got {k}")
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef char *used = <char *> malloc(max(d, 1))
    try:
        for i in range(n):
            _ascent_row(g[i], out[i], kind, step, k, used)
    finally:
        free(used)
    return out_arr


def pgd_linreg(X, y, theta, delta0, kinds, radii, step_sizes, ks, int steps):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const int[::1] kd = np.ascontiguousarray(kinds, dtype=np.int32)
    cdef const double[::1] rad = np.ascontiguousarray(radii, dtype=np.float64)
    cdef const double[::1] ss = np.ascontiguousarray(step_sizes, dtype=np.float64)
    cdef const int[::1] kk = np.ascontiguousarray(ks, dtype=np.int32)
    cdef Py_ssize_t n = Xv.shape[0], d = Xv.shape[1], P = kd.shape[0]
    cdef Py_ssize_t i, j, p, it
    for p in range(P):
        if kd[p] < 0 or kd[p] > 2:
            raise ValueError(f"unknown norm code {kd[p]}")
        if kd[p] == K_L1 and (kk[p] < 1 or kk[p] > d):
            raise ValueError(f"top-k must satisfy 1 <= k <= {d}, got {kk[p]}")

    best_arr = np.array(delta0, dtype=np.float64, order="C", copy=True)
    cur_arr = best_arr.copy()
    best_loss_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] best = best_arr
    cdef double[:, ::1] cur = cur_arr
    cdef double[::1] best_loss = best_loss_arr
    cand_arr = np.empty((P, d), dtype=np.float64)
    grad_arr = np.empty(d, dtype=np.float64)
    step_arr = np.empty(d, dtype=np.float64)
    cdef double[:, ::1] cand = cand_arr
    cdef double[::1] grad = grad_arr
    cdef double[::1] stepv = step_arr
    cdef char *used = <char *> malloc(max(d, 1))
    cdef double r, loss, cl, top
    cdef Py_ssize_t pick
    try:
        for i in range(n):
            r = -yv[i]
            for j in range(d):
                r += th[j] * (Xv[i, j] + cur[i, j])
            best_loss[i] = r * r
            for it in range(steps):
                for j in range(d):
                    grad[j] = 2.0 * r * th[j]
                pick = 0
                top = -1.0
                for p in range(P):
                    _ascent_row(grad, stepv, kd[p], ss[p], kk[p], used)
                    for j in range(d):
                        cand[p, j] = cur[i, j] + stepv[j]
                    _project_row(&cand[p, 0], d, kd[p], rad[p])
                    cl = -yv[i]
                    for j in range(d):
                        cl += th[j] * (Xv[i, j] + cand[p, j])
                    if cl * cl > top:
                        top = cl * cl
                        pick = p
                        r = cl
                for j in range(d):
                    cur[i, j] = cand[pick, j]
                if top > best_loss[i]:
                    best_loss[i] = top
                    for j in range(d):
                        best[i, j] = cur[i, j]
    finally:
        free(used)
    return best_arr, best_loss_arr
