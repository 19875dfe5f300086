# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_kernels_py``.

Same contracts, same summation order and tie-breaking. Covariance sums use
Neumaier compensation instead of ``math.fsum``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, fabs

cnp.import_array()


cdef inline void _nsum(double x, double* s, double* c) noexcept nogil:
    cdef double t = s[0] + x
    if fabs(s[0]) >= fabs(x):
        c[0] += (s[0] - t) + x
    else:
        c[0] += (x - t) + s[0]
    s[0] = t


cdef double _cov(const double[:] a, const double[:] b, const unsigned char[:] mask) noexcept nogil:
    cdef Py_ssize_t i, n = a.shape[0]
    cdef double sa = 0.0, ca = 0.0, sb = 0.0, cb = 0.0, s = 0.0, c = 0.0
    cdef double ma, mb, cnt = 0.0
    for i in range(n):
        if mask[i]:
            _nsum(a[i], &sa, &ca)
            _nsum(b[i], &sb, &cb)
            cnt += 1.0
    ma = (sa + ca) / cnt
    mb = (sb + cb) / cnt
    for i in range(n):
        if mask[i]:
            _nsum((a[i] - ma) * (b[i] - mb), &s, &c)
    return (s + c) / cnt


def masked_cov(a, b, mask):
    cdef const double[:] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef const unsigned char[:] mv = np.ascontiguousarray(mask, dtype=np.uint8)
    return _cov(av, bv, mv)


def cell_covariances(cols, y, assignment, Py_ssize_t k):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] C = np.ascontiguousarray(cols, dtype=np.float64)
    cdef const double[:] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const long long[:] av = np.ascontiguousarray(assignment, dtype=np.int64)
    cdef Py_ssize_t n = C.shape[0], m = C.shape[1], c, j, i
    out = np.full((k, m), np.nan)
    cdef double[:, :] ov = out
    cdef unsigned char[:] mv
    cdef const double[:] col
    mask = np.zeros(n, dtype=np.uint8)
    mv = mask
    for c in range(k):
        has = False
        for i in range(n):
            mv[i] = av[i] == c
            if mv[i]:
                has = True
        if not has:
            continue
        for j in range(m):
            col = np.ascontiguousarray(C[:, j])
            ov[c, j] = _cov(col, yv, mv)
    return out


def chebyshev_matrix(P_in):
    cdef const double[:, ::1] P = np.ascontiguousarray(P_in, dtype=np.float64)
    cdef Py_ssize_t n = P.shape[0], m = P.shape[1], i, j, t
    out = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] D = out
    cdef double d, v
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                d = 0.0
                for t in range(m):
                    v = fabs(P[i, t] - P[j, t])
                    if v > d:
                        d = v
                D[i, j] = d
                D[j, i] = d
    return out


cdef inline void _recompute(double[:, ::1] D, Py_ssize_t i, long long[::1] nn, double[::1] mind,
                            unsigned char[::1] alive) noexcept nogil:
    cdef Py_ssize_t j, n = D.shape[0], arg = -1
    cdef double best = INFINITY
    cdef double* row = &D[i, 0]
    for j in range(i + 1, n):
        if alive[j] and row[j] < best:
            best = row[j]
            arg = j
    if arg == -1:
        # no finite entry left: argmin of an all-inf row is its first entry
        if i + 1 < n:
            arg = i + 1
    nn[i] = arg
    mind[i] = best


def complete_linkage(D_in, Py_ssize_t stop_k, double max_dist):
    cdef double[:, ::1] D = D_in
    cdef Py_ssize_t n = D.shape[0], i, j, k, p, n_active
    cdef double d, v
    nn_arr = np.full(n, -1, dtype=np.int64)
    mind_arr = np.full(n, np.inf)
    parent_arr = np.arange(n, dtype=np.int64)
    alive_arr = np.ones(n, dtype=np.uint8)
    cdef long long[::1] nn = nn_arr
    cdef double[::1] mind = mind_arr
    cdef long long[::1] parent = parent_arr
    cdef unsigned char[::1] alive = alive_arr
    cdef double* ri
    cdef double* rj
    with nogil:
        for i in range(n):
            D[i, i] = INFINITY
        for i in range(n):
            _recompute(D, i, nn, mind, alive)
        n_active = n
        while n_active > stop_k:
            i = 0
            d = mind[0]
            for k in range(1, n):
                if mind[k] < d:
                    d = mind[k]
                    i = k
            if not d <= max_dist:
                break
            j = nn[i]
            alive[j] = 0
            ri = &D[i, 0]
            rj = &D[j, 0]
            for k in range(n):
                if alive[k]:
                    v = ri[k] if ri[k] >= rj[k] else rj[k]
                    ri[k] = v
                    D[k, i] = v
            ri[i] = INFINITY
            mind[j] = INFINITY
            nn[j] = -1
            parent[j] = i
            n_active -= 1
            _recompute(D, i, nn, mind, alive)
            for k in range(i):
                if nn[k] == i or nn[k] == j:
                    _recompute(D, k, nn, mind, alive)
            for k in range(i + 1, j):
                if nn[k] == j:
                    _recompute(D, k, nn, mind, alive)
        for p in range(n):
            parent[p] = parent[parent[p]]
    return parent_arr


def best_split(X, y, w, Py_ssize_t min_leaf):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Xa = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[:] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = Xa.shape[0], dim = Xa.shape[1], f, p, r
    cdef long best_f = -1
    cdef double best_t = 0.0, best_g = -INFINITY
    cdef double w_tot = 0.0, wy_tot = 0.0, base, cw, cwy, wl, wr, wyl, wyr, g, lo, hi, t
    cdef const long long[:] ov
    cdef const double[:] xcol
    if n < 2 * min_leaf:
        return best_f, best_t, best_g
    for r in range(n):
        w_tot += wv[r]
        wy_tot += wv[r] * yv[r]
    base = wy_tot * wy_tot / w_tot
    for f in range(dim):
        xcol = np.ascontiguousarray(Xa[:, f])
        ov = np.argsort(Xa[:, f], kind="stable").astype(np.int64)
        cw = 0.0
        cwy = 0.0
        for p in range(n - min_leaf):
            r = ov[p]
            cw += wv[r]
            cwy += wv[r] * yv[r]
            if p < min_leaf - 1:
                continue
            lo = xcol[r]
            hi = xcol[ov[p + 1]]
            if not lo < hi:
                continue
            wl = cw
            wr = w_tot - wl
            if not (wl > 0 and wr > 0):
                continue
            wyl = cwy
            wyr = wy_tot - wyl
            g = wyl * wyl / wl + wyr * wyr / wr - base
            if g > best_g:
                best_g = g
                best_f = f
                t = (lo + hi) / 2.0
                best_t = lo if t >= hi else t
    return best_f, best_t, best_g
