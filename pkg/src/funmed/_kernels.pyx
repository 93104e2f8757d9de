# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. See ``_kernels_py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _find_span(const double[::1] knots, Py_ssize_t p,
                                  Py_ssize_t nb, double x) nogil:
    cdef Py_ssize_t lo, hi, mid
    if x >= knots[nb]:
        return nb - 1
    if x <= knots[p]:
        return p
    lo = p
    hi = nb
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if x < knots[mid]:
            hi = mid
        else:
            lo = mid
    return lo


def bspline_design(knots, int degree, x):
    cdef const double[::1] kv = np.ascontiguousarray(knots, dtype=np.float64)
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef Py_ssize_t p = degree
    cdef Py_ssize_t nb = kv.shape[0] - p - 1
    cdef Py_ssize_t n = xv.shape[0]
    out_arr = np.zeros((n, nb), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] vals = np.empty(p + 1)
    cdef double[::1] left = np.empty(p + 1)
    cdef double[::1] right = np.empty(p + 1)
    cdef Py_ssize_t i, j, r, span
    cdef double t, saved, temp
    with nogil:
        for i in range(n):
            t = xv[i]
            span = _find_span(kv, p, nb, t)
            vals[0] = 1.0
            for j in range(1, p + 1):
                left[j] = t - kv[span + 1 - j]
                right[j] = kv[span + j] - t
                saved = 0.0
                for r in range(j):
                    temp = vals[r] / (right[r + 1] + left[j - r])
                    vals[r] = saved + right[r + 1] * temp
                    saved = left[j - r] * temp
                vals[j] = saved
            for r in range(p + 1):
                out[i, span - p + r] = vals[r]
    return out_arr


def cluster_gram(X, w, y, cluster, Py_ssize_t n_clusters):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const cnp.int64_t[::1] cv = np.ascontiguousarray(cluster, dtype=np.int64)
    cdef Py_ssize_t n = Xv.shape[0]
    cdef Py_ssize_t p = Xv.shape[1]
    G_arr = np.zeros((n_clusters, p, p), dtype=np.float64)
    r_arr = np.zeros((n_clusters, p), dtype=np.float64)
    s_arr = np.zeros(n_clusters, dtype=np.float64)
    cnt_arr = np.zeros(n_clusters, dtype=np.int64)
    cdef double[:, :, ::1] G = G_arr
    cdef double[:, ::1] R = r_arr
    cdef double[::1] S = s_arr
    cdef cnp.int64_t[::1] C = cnt_arr
    cdef cnp.intp_t[::1] nz = np.empty(p, dtype=np.intp)
    cdef Py_ssize_t i, a, b, k, m, ja, jb
    cdef cnp.int64_t c
    cdef double wi, yi, xa
    with nogil:
        for i in range(n):
            c = cv[i]
            wi = wv[i]
            yi = yv[i]
            m = 0
            for k in range(p):
                if Xv[i, k] != 0.0:
                    nz[m] = k
                    m += 1
            for a in range(m):
                ja = nz[a]
                xa = wi * Xv[i, ja]
                R[c, ja] += xa * yi
                for b in range(a, m):
                    jb = nz[b]
                    G[c, ja, jb] += xa * Xv[i, jb]
            S[c] += wi * yi * yi
            C[c] += 1
        for c in range(n_clusters):
            for a in range(p):
                for b in range(a + 1, p):
                    G[c, b, a] = G[c, a, b]
    return G_arr, r_arr, s_arr, cnt_arr


def cluster_score_sums(X, u, cluster, Py_ssize_t n_clusters):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef const cnp.int64_t[::1] cv = np.ascontiguousarray(cluster, dtype=np.int64)
    cdef Py_ssize_t n = Xv.shape[0]
    cdef Py_ssize_t p = Xv.shape[1]
    out_arr = np.zeros((n_clusters, p), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k
    cdef double ui
    with nogil:
        for i in range(n):
            ui = uv[i]
            if ui == 0.0:
                continue
            for k in range(p):
                out[cv[i], k] += ui * Xv[i, k]
    return out_arr
