"""Pure-numpy implementations of the hot kernels.

Same signatures and results (up to floating-point summation order) as the
compiled ``_kernels`` extension. Used when the extension is not built or
when ``FUNMED_PURE_PYTHON=1`` is set.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def bspline_design(knots, degree, x):
    """Dense B-spline design matrix by the Cox-de Boor triangular recurrence.

    ``knots`` must be a clamped, non-decreasing knot vector; every ``x`` must
    lie in ``[knots[degree], knots[-degree - 1]]`` (checked by the caller).
    """
    knots = np.asarray(knots, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    p = int(degree)
    nb = knots.size - p - 1
    n = x.size
    span = np.searchsorted(knots, x, side="right") - 1
    np.clip(span, p, nb - 1, out=span)

    vals = np.zeros((n, p + 1))
    vals[:, 0] = 1.0
    left = np.zeros((n, p + 1))
    right = np.zeros((n, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - knots[span + 1 - j]
        right[:, j] = knots[span + j] - x
        saved = np.zeros(n)
        for r in range(j):
            temp = vals[:, r] / (right[:, r + 1] + left[:, j - r])
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved

    out = np.zeros((n, nb))
    rows = np.arange(n)
    for r in range(p + 1):
        out[rows, span - p + r] = vals[:, r]
    return out


def _cluster_slices(cluster, n_clusters):
    order = np.argsort(cluster, kind="stable")
    bounds = np.searchsorted(cluster[order], np.arange(n_clusters + 1), side="left")
    return order, bounds


def cluster_gram(X, w, y, cluster, n_clusters):
    """Per-cluster weighted sufficient statistics.

    Returns ``(G, r, s, counts)`` with ``G[c] = X_c' W_c X_c``,
    ``r[c] = X_c' W_c y_c``, ``s[c] = y_c' W_c y_c`` and the row count of
    each cluster.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    cluster = np.asarray(cluster, dtype=np.int64)
    p = X.shape[1]
    G = np.zeros((n_clusters, p, p))
    r = np.zeros((n_clusters, p))
    s = np.zeros(n_clusters)
    order, bounds = _cluster_slices(cluster, n_clusters)
    for c in range(n_clusters):
        idx = order[bounds[c]:bounds[c + 1]]
        if idx.size == 0:
            continue
        Xc = X[idx]
        wc = w[idx]
        yc = y[idx]
        Xw = Xc * wc[:, None]
        G[c] = Xw.T @ Xc
        r[c] = Xw.T @ yc
        s[c] = np.dot(wc * yc, yc)
    counts = np.diff(bounds).astype(np.int64)
    return G, r, s, counts


def cluster_score_sums(X, u, cluster, n_clusters):
    """Sum of ``u_i * x_i`` within each cluster, shape ``(n_clusters, p)``."""
    X = np.asarray(X, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    cluster = np.asarray(cluster, dtype=np.int64)
    n = X.shape[0]
    ind = sp.csr_matrix((np.ones(n), (cluster, np.arange(n))), shape=(n_clusters, n))
    return np.asarray(ind @ (X * u[:, None]))
