"""Penalized IRLS for identity / log / logit links with quadratic penalties.

The fitted coefficients minimise ``deviance(c) + sum_j lam_j c' P_j c`` (the
penalized deviance, i.e. twice the penalized negative log-likelihood) under
working independence. Each link is paired with its canonical family:
identity/Gaussian, log/Poisson, logit/Bernoulli.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import linalg

from . import kernels
from .errors import ConvergenceWarning, InputError
from .splines import PenaltyMatrix

PROB_CLAMP = 1e-10
DEFAULT_LAMBDA_GRID = np.logspace(-4, 4, 41)


class LinkFunction(enum.Enum):
    IDENTITY = "identity"
    LOG = "log"
    LOGIT = "logit"

    @classmethod
    def parse(cls, value) -> "LinkFunction":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InputError(f"unknown link {value!r}; expected identity, log or logit") from None

    def link(self, mu):
        mu = np.asarray(mu, dtype=np.float64)
        if self is LinkFunction.IDENTITY:
            return mu.copy()
        if self is LinkFunction.LOG:
            return np.log(mu)
        return np.log(mu) - np.log1p(-mu)

    def inverse(self, eta):
        eta = np.asarray(eta, dtype=np.float64)
        if self is LinkFunction.IDENTITY:
            return eta.copy()
        if self is LinkFunction.LOG:
            return np.exp(np.minimum(eta, 700.0))
        return np.clip(_expit(eta), PROB_CLAMP, 1.0 - PROB_CLAMP)

    def variance(self, mu):
        """Canonical-family variance function; equals dmu/deta for these links."""
        if self is LinkFunction.IDENTITY:
            return np.ones_like(mu)
        if self is LinkFunction.LOG:
            return mu
        return mu * (1.0 - mu)

    def deviance(self, y, mu, w) -> float:
        if self is LinkFunction.IDENTITY:
            r = y - mu
            return float(np.dot(w, r * r))
        if self is LinkFunction.LOG:
            ylogy = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / mu), 0.0)
            return float(2.0 * np.dot(w, ylogy - (y - mu)))
        ll = np.where(y > 0, y * np.log(mu), 0.0) + np.where(y < 1, (1 - y) * np.log1p(-mu), 0.0)
        return float(-2.0 * np.dot(w, ll))

    def check_response(self, y) -> None:
        if not np.all(np.isfinite(y)):
            raise InputError("response contains non-finite values")
        if self is LinkFunction.LOG and np.any(y < 0):
            raise InputError("log link requires a non-negative response")
        if self is LinkFunction.LOGIT and np.any((y < 0) | (y > 1)):
            raise InputError("logit link requires responses in [0, 1]")


def _expit(eta):
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True)
class PenaltyBlock:
    """Penalty ``lam * c[columns]' P c[columns]`` on a contiguous column range."""

    columns: slice
    matrix: np.ndarray
    lam: float = 0.0

    def __post_init__(self):
        mat = self.matrix.values if isinstance(self.matrix, PenaltyMatrix) else self.matrix
        mat = np.asarray(mat, dtype=np.float64)
        object.__setattr__(self, "matrix", mat)
        if self.lam < 0 or not np.isfinite(self.lam):
            raise InputError(f"penalty lambda must be finite and >= 0, got {self.lam}")
        if self.columns.step not in (None, 1):
            raise InputError("penalty column range must be contiguous")
        width = self.columns.stop - self.columns.start
        if mat.shape != (width, width):
            raise InputError(f"penalty matrix shape {mat.shape} does not match {width} columns")

    def with_lambda(self, lam: float) -> "PenaltyBlock":
        return replace(self, lam=float(lam))

    @property
    def rank(self) -> int:
        return int(np.linalg.matrix_rank(self.matrix))


def penalty_total(p: int, penalties: Sequence[PenaltyBlock]) -> np.ndarray:
    """Embed all penalty blocks into one ``p x p`` matrix."""
    S = np.zeros((p, p))
    seen = np.zeros(p, dtype=bool)
    for blk in penalties:
        cols = blk.columns
        if cols.start < 0 or cols.stop > p:
            raise InputError(f"penalty columns {cols} outside design with {p} columns")
        if seen[cols].any():
            raise InputError("penalty blocks overlap")
        seen[cols] = True
        S[cols, cols] += blk.lam * blk.matrix
    return S


@dataclass
class GlmFit:
    coefficients: np.ndarray
    model_covariance: np.ndarray
    deviance: float
    effective_df: float
    converged: bool
    iterations: int
    link: LinkFunction
    penalty: np.ndarray
    scale: float
    n_obs: int
    sandwich_covariance: np.ndarray | None = None
    lambdas: tuple = ()
    warnings: list = field(default_factory=list)
    trace: list = field(default_factory=list)   # penalized deviance after each iteration
    log_det_info: float = np.nan  # log|X'WX + S| at the solution

    @property
    def penalized_deviance(self) -> float:
        c = self.coefficients
        return self.deviance + float(c @ self.penalty @ c)

    @property
    def model_se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.model_covariance), 0.0, None))

    @property
    def gcv(self) -> float:
        return gcv_score(self.deviance, self.effective_df, self.n_obs)


def gcv_score(deviance: float, edf: float, n: int) -> float:
    denom = n - edf
    if denom <= 0:
        return np.inf
    return n * deviance / denom**2


def reml_score(pen_dev: float, log_det_info: float, lams, ranks, n: int, p: int,
               known_scale: bool) -> float:
    """Negative Laplace-approximate restricted log-likelihood (constants dropped).

    ``pen_dev`` is deviance plus ``c'Sc``. With ``known_scale`` (binomial,
    Poisson) the score is ``(pen_dev + log|X'WX+S| - sum_j r_j log lam_j) / 2``;
    otherwise the scale is profiled out and ``pen_dev / 2`` is replaced by
    ``(n - Mp) / 2 * log(pen_dev)`` with ``Mp = p - sum_j r_j`` the dimension
    of the penalty null space.
    """
    log_det_s = 0.0
    for lam, r in zip(lams, ranks):
        if r == 0:
            continue
        if lam <= 0:
            return np.inf
        log_det_s += r * np.log(lam)
    if known_scale:
        fit_term = 0.5 * pen_dev
    else:
        dof = n - (p - sum(ranks))
        if dof <= 0 or pen_dev <= 0:
            return -np.inf if dof > 0 else np.inf
        fit_term = 0.5 * dof * np.log(pen_dev)
    return fit_term + 0.5 * log_det_info - 0.5 * log_det_s


def _chol_logdet(cf) -> float:
    return float(2.0 * np.sum(np.log(np.abs(np.diag(cf[0])))))


CRITERIA = ("gcv", "reml")


def _criterion(name: str) -> str:
    c = str(name).lower()
    if c not in CRITERIA:
        raise InputError(f"unknown smoothing criterion {name!r}; expected one of {CRITERIA}")
    return c


def _warn(msg: str, sink: list | None = None) -> None:
    warnings.warn(msg, ConvergenceWarning, stacklevel=3)
    if sink is not None:
        sink.append(msg)


def _cho(A: np.ndarray, sink: list | None = None):
    """Cholesky factor of a symmetric matrix, adding diagonal jitter if needed."""
    try:
        return linalg.cho_factor(A, lower=False, check_finite=False)
    except linalg.LinAlgError:
        pass
    if not np.all(np.isfinite(A)):
        raise InputError("normal equations contain non-finite values")
    scale = max(1.0, float(np.max(np.abs(np.diag(A)))))
    for jitter in (1e-10, 1e-8, 1e-6, 1e-4):
        try:
            cf = linalg.cho_factor(A + jitter * scale * np.eye(A.shape[0]),
                                   lower=False, check_finite=False)
        except linalg.LinAlgError:
            continue
        _warn(f"singular working matrix; added ridge jitter {jitter:g} to the diagonal", sink)
        return cf
    raise InputError("normal equations are singular even after ridge jitter")


def _validate(design, response, weights):
    X = np.asarray(design, dtype=np.float64)
    y = np.asarray(response, dtype=np.float64)
    if X.ndim != 2:
        raise InputError("design must be a 2-d matrix")
    if y.ndim != 1 or y.size != X.shape[0]:
        raise InputError(f"response length {y.size} does not match {X.shape[0]} design rows")
    if weights is None:
        w = np.ones_like(y)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != y.shape:
            raise InputError("weights must align with the response")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InputError("weights must be finite and non-negative")
    if not np.all(np.isfinite(X)):
        raise InputError("design contains non-finite values")
    return X, y, w


def _start_mean(link: LinkFunction, y, w) -> float:
    m = float(np.dot(w, y) / np.sum(w))
    if link is LinkFunction.LOGIT:
        return min(max(m, 0.01), 0.99)
    if link is LinkFunction.LOG:
        return max(m, 0.01)
    return m


def fit_penalized_glm(design, response, weights=None, link=LinkFunction.IDENTITY,
                      penalties: Sequence[PenaltyBlock] = (), tol: float = 1e-8,
                      max_iter: int = 100, start=None) -> GlmFit:
    """Penalized IRLS.

    Parameters
    ----------
    design : (n, p) array
    response : (n,) array
    weights : (n,) array, optional
        Prior weights (default all ones).
    link : LinkFunction or str
    penalties : sequence of PenaltyBlock
    tol : float
        Convergence when the relative change of the penalized deviance
        ``|d_new - d_old| / (|d_new| + 0.1)`` falls below ``tol``.
    max_iter : int
    start : (p,) array, optional
        Starting coefficients. Defaults to the link-transformed weighted mean
        of the response for every row.

    Returns
    -------
    GlmFit
        ``converged=False`` (with a :class:`ConvergenceWarning`) if
        ``max_iter`` is exhausted.
    """
    link = LinkFunction.parse(link)
    X, y, w = _validate(design, response, weights)
    link.check_response(y)
    n, p = X.shape
    S = penalty_total(p, penalties)
    notes: list[str] = []

    if start is not None:
        coef = np.asarray(start, dtype=np.float64).copy()
        eta = X @ coef
        mu = link.inverse(eta)
        pdev_old = link.deviance(y, mu, w) + float(coef @ S @ coef)
    else:
        coef = None
        eta = np.full(n, link.link(_start_mean(link, y, w)))
        mu = link.inverse(eta)
        pdev_old = np.inf

    converged = False
    trace: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        var = link.variance(mu)
        W = w * var
        z = eta + (y - mu) / var
        Xw = X * W[:, None]
        A = Xw.T @ X + S
        cf = _cho(A, notes)
        new = linalg.cho_solve(cf, Xw.T @ z, check_finite=False)
        eta_new = X @ new
        mu_new = link.inverse(eta_new)
        pdev = link.deviance(y, mu_new, w) + float(new @ S @ new)
        if coef is not None and pdev > pdev_old + 1e-10 * (abs(pdev_old) + 1.0):
            # step halving toward the previous iterate
            step = 1.0
            for _ in range(30):
                step *= 0.5
                trial = coef + step * (new - coef)
                eta_t = X @ trial
                mu_t = link.inverse(eta_t)
                pdev_t = link.deviance(y, mu_t, w) + float(trial @ S @ trial)
                if pdev_t <= pdev_old + 1e-10 * (abs(pdev_old) + 1.0):
                    new, eta_new, mu_new, pdev = trial, eta_t, mu_t, pdev_t
                    break
            else:
                new, eta_new, mu_new, pdev = coef, eta, mu, pdev_old
        change = abs(pdev - pdev_old) / (abs(pdev) + 0.1) if np.isfinite(pdev_old) else np.inf
        coef, eta, mu, pdev_old = new, eta_new, mu_new, pdev
        trace.append(float(pdev))
        if link is LinkFunction.IDENTITY or change < tol:
            converged = True
            break

    if not converged:
        _warn(f"penalized IRLS did not converge in {max_iter} iterations", notes)
    if link is LinkFunction.LOGIT:
        at_edge = (mu <= 2 * PROB_CLAMP) | (mu >= 1 - 2 * PROB_CLAMP)
        if np.any(at_edge):
            _warn("fitted probabilities numerically 0 or 1 (separation); "
                  "estimates are clamped", notes)

    var = link.variance(mu)
    W = w * var
    Xw = X * W[:, None]
    H = Xw.T @ X
    cf = _cho(H + S, notes)
    log_det = _chol_logdet(cf)
    Ainv = linalg.cho_solve(cf, np.eye(p), check_finite=False)
    Ainv = 0.5 * (Ainv + Ainv.T)
    edf = float(np.sum(Ainv * H))
    dev = link.deviance(y, mu, w)
    if link is LinkFunction.IDENTITY:
        scale = dev / (n - edf) if n - edf > 0 else np.nan
    else:
        scale = 1.0
    return GlmFit(
        coefficients=coef,
        model_covariance=scale * Ainv,
        deviance=dev,
        effective_df=edf,
        converged=converged,
        iterations=it,
        link=link,
        penalty=S,
        scale=scale,
        n_obs=n,
        lambdas=tuple(b.lam for b in penalties),
        warnings=notes,
        trace=trace,
        log_det_info=log_det,
    )


# -- Gaussian sufficient statistics ------------------------------------------

@dataclass
class GaussianStats:
    """``X'WX``, ``X'Wy``, ``y'Wy`` and ``n`` for an identity-link fit.

    Per-cluster stacks can be combined with integer multiplicities, which is
    how subject-level bootstrap resamples are refitted without rebuilding the
    design.
    """

    gram: np.ndarray
    xty: np.ndarray
    yty: float
    n: int

    @classmethod
    def from_design(cls, X, y, w=None) -> "GaussianStats":
        X, y, w = _validate(X, y, w)
        Xw = X * w[:, None]
        return cls(Xw.T @ X, Xw.T @ y, float(np.dot(w * y, y)), X.shape[0])


@dataclass
class ClusterStats:
    """Per-cluster Gaussian sufficient statistics (one slice per cluster)."""

    gram: np.ndarray   # (n_clusters, p, p)
    xty: np.ndarray    # (n_clusters, p)
    yty: np.ndarray    # (n_clusters,)
    counts: np.ndarray  # rows per cluster

    @classmethod
    def from_design(cls, X, y, cluster, n_clusters, w=None) -> "ClusterStats":
        X, y, w = _validate(X, y, w)
        G, r, s, cnt = kernels.cluster_gram(X, w, y, np.asarray(cluster, dtype=np.int64),
                                            int(n_clusters))
        return cls(G, r, s, cnt)

    def combine(self, multiplicity) -> GaussianStats:
        m = np.asarray(multiplicity, dtype=np.float64)
        p = self.gram.shape[1]
        gram = (m @ self.gram.reshape(len(m), p * p)).reshape(p, p)
        return GaussianStats(gram, m @ self.xty, float(m @ self.yty), int(round(m @ self.counts)))

    def total(self) -> GaussianStats:
        return self.combine(np.ones(self.gram.shape[0]))


def solve_gaussian_stats(stats: GaussianStats, S: np.ndarray, sink: list | None = None):
    """Penalized least squares from sufficient statistics.

    Returns ``(coef, deviance, edf, A_inverse)``.
    """
    A = stats.gram + S
    cf = _cho(A, sink)
    rhs = np.column_stack([stats.xty, stats.gram])
    sol = linalg.cho_solve(cf, rhs, check_finite=False)
    coef = sol[:, 0]
    edf = float(np.trace(sol[:, 1:]))
    dev = stats.yty - 2.0 * float(coef @ stats.xty) + float(coef @ stats.gram @ coef)
    dev = max(dev, 0.0)
    return coef, dev, edf, cf


def _gaussian_fit_from_stats(stats: GaussianStats, penalties, sink) -> GlmFit:
    p = stats.gram.shape[0]
    S = penalty_total(p, penalties)
    coef, dev, edf, cf = solve_gaussian_stats(stats, S, sink)
    Ainv = linalg.cho_solve(cf, np.eye(p), check_finite=False)
    Ainv = 0.5 * (Ainv + Ainv.T)
    scale = dev / (stats.n - edf) if stats.n - edf > 0 else np.nan
    return GlmFit(coef, scale * Ainv, dev, edf, True, 1, LinkFunction.IDENTITY, S, scale,
                  stats.n, lambdas=tuple(b.lam for b in penalties), warnings=list(sink))


# -- smoothing parameter selection -------------------------------------------

@dataclass
class LambdaSelection:
    lambdas: tuple
    fit: GlmFit
    grid: np.ndarray
    scores: np.ndarray  # GCV along the shared-lambda grid


def _better(score: float, best: float) -> bool:
    # ties (within 1e-12 relative) go to the later, i.e. larger, lambda
    return score <= best + 1e-12 * abs(best)


def _gaussian_score(stats: GaussianStats, S, lams, ranks, criterion: str):
    coef, dev, edf, cf = solve_gaussian_stats(stats, S)
    if criterion == "gcv":
        return gcv_score(dev, edf, stats.n), coef, dev
    pen_dev = dev + float(coef @ S @ coef)
    return (reml_score(pen_dev, _chol_logdet(cf), lams, ranks, stats.n, S.shape[0], False),
            coef, dev)


def select_lambda_from_stats(stats: GaussianStats, templates: Sequence[PenaltyBlock],
                             lambda_grid=None, criterion: str = "gcv"
                             ) -> tuple[float, np.ndarray, float, np.ndarray]:
    """Shared-lambda search for an identity-link fit given sufficient statistics.

    Returns ``(lambda, coef, deviance, scores)``. Used by the bootstrap, where
    only point estimates are needed.
    """
    criterion = _criterion(criterion)
    grid = np.sort(np.asarray(DEFAULT_LAMBDA_GRID if lambda_grid is None else lambda_grid,
                              dtype=np.float64))
    p = stats.gram.shape[0]
    S1 = penalty_total(p, [t.with_lambda(1.0) for t in templates])
    ranks = [t.rank for t in templates]
    scores = np.empty(grid.size)
    best = (np.inf, None, None, None)
    for k, lam in enumerate(grid):
        scores[k], coef, dev = _gaussian_score(stats, lam * S1, (lam,) * len(ranks), ranks,
                                               criterion)
        if _better(scores[k], best[0]):
            best = (scores[k], lam, coef, dev)
    if best[1] is None:
        if grid.size != 1:
            raise InputError(f"no finite {criterion.upper()} score on the lambda grid")
        coef, dev, _, _ = solve_gaussian_stats(stats, grid[0] * S1)
        best = (np.inf, grid[0], coef, dev)
    return float(best[1]), best[2], best[3], scores


def select_lambda(design, response, weights=None, link=LinkFunction.IDENTITY,
                  penalty_templates: Sequence[PenaltyBlock] = (), lambda_grid=None,
                  per_block: bool = False, tol: float = 1e-8, max_iter: int = 100,
                  stats: GaussianStats | None = None, criterion: str = "gcv") -> LambdaSelection:
    """Choose smoothing parameters over a grid.

    ``criterion="gcv"`` minimizes ``n * deviance / (n - edf)**2``;
    ``criterion="reml"`` minimizes the Laplace-approximate restricted
    likelihood score of :func:`reml_score` (a lambda of 0 on a penalized block
    scores infinity). By default one lambda is shared by all penalty blocks;
    ``per_block=True`` follows the shared search with coordinate-wise sweeps
    of each block over the same grid. Ties are broken toward the larger
    lambda.
    """
    link = LinkFunction.parse(link)
    criterion = _criterion(criterion)
    grid = np.sort(np.asarray(DEFAULT_LAMBDA_GRID if lambda_grid is None else lambda_grid,
                              dtype=np.float64))
    if grid.size == 0:
        raise InputError("lambda grid is empty")
    if np.any(grid < 0):
        raise InputError("lambda grid values must be non-negative")
    templates = list(penalty_templates)
    ranks = [t.rank for t in templates]
    X, y, w = _validate(design, response, weights)
    link.check_response(y)

    if link is LinkFunction.IDENTITY:
        if stats is None:
            stats = GaussianStats.from_design(X, y, w)
        p = X.shape[1]

        def score_of(lams):
            S = penalty_total(p, [t.with_lambda(l) for t, l in zip(templates, lams)])
            return _gaussian_score(stats, S, lams, ranks, criterion)[0]

        def final(lams):
            blocks = [t.with_lambda(l) for t, l in zip(templates, lams)]
            return _gaussian_fit_from_stats(stats, blocks, [])
    else:
        cache: dict = {}
        warm = [None]

        def fit_of(lams):
            key = tuple(lams)
            if key not in cache:
                blocks = [t.with_lambda(l) for t, l in zip(templates, lams)]
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", ConvergenceWarning)
                    f = fit_penalized_glm(X, y, w, link, blocks, tol, max_iter, start=warm[0])
                if not np.all(np.isfinite(f.coefficients)):
                    f = None
                elif f.converged:
                    warm[0] = f.coefficients
                cache[key] = f
            return cache[key]

        def score_of(lams):
            f = fit_of(lams)
            if f is None:
                return np.inf
            if criterion == "gcv":
                return f.gcv
            return reml_score(f.penalized_deviance, f.log_det_info, lams, ranks, f.n_obs,
                              X.shape[1], True)

        def final(lams):
            blocks = [t.with_lambda(l) for t, l in zip(templates, lams)]
            return fit_penalized_glm(X, y, w, link, blocks, tol, max_iter, start=warm[0])

    nb = len(templates)
    scores = np.empty(grid.size)
    best_score, best_lams = np.inf, None
    for k, lam in enumerate(grid):
        scores[k] = score_of((lam,) * nb)
        if _better(scores[k], best_score):
            best_score, best_lams = scores[k], (lam,) * nb
    if best_lams is None:
        # a lone candidate is used even when its score is infinite (e.g. REML at lambda 0)
        only = (grid[0],) * nb
        if grid.size != 1 or (link is not LinkFunction.IDENTITY and fit_of(only) is None):
            raise InputError(f"every candidate fit failed; no finite {criterion.upper()} score")
        best_lams = only

    if per_block and nb > 1:
        lams = list(best_lams)
        for _ in range(2):
            changed = False
            for j in range(nb):
                for lam in grid:
                    trial = lams.copy()
                    trial[j] = lam
                    s = score_of(tuple(trial))
                    if s < best_score - 1e-12 * abs(best_score):
                        best_score, lams, changed = s, trial, True
            if not changed:
                break
        best_lams = tuple(lams)

    fit = final(best_lams)
    return LambdaSelection(tuple(float(l) for l in best_lams), fit, grid, scores)


# -- sandwich covariance -----------------------------------------------------

def cluster_index(cluster_ids) -> tuple[np.ndarray, int]:
    """Map arbitrary cluster labels to ``0..k-1`` (in order of first sorted label)."""
    _, inv = np.unique(np.asarray(cluster_ids), return_inverse=True)
    inv = inv.astype(np.int64).ravel()
    return inv, int(inv.max()) + 1 if inv.size else 0


def sandwich_covariance(fit: GlmFit, design, response, cluster_ids, weights=None) -> np.ndarray:
    """Cluster-robust covariance ``A^-1 B A^-1``.

    ``A`` is the penalized working information ``X'WX + S`` at the fitted
    coefficients and ``B`` the sum over clusters of the outer product of the
    cluster's summed score ``sum_i w_i (y_i - mu_i) x_i``.
    """
    X, y, w = _validate(design, response, weights)
    idx, k = cluster_index(cluster_ids)
    if idx.size != y.size:
        raise InputError("cluster ids must align with the design rows")
    link = fit.link
    mu = link.inverse(X @ fit.coefficients)
    W = w * link.variance(mu)
    A = (X * W[:, None]).T @ X + fit.penalty
    U = kernels.cluster_score_sums(X, w * (y - mu), idx, k)
    B = U.T @ U
    cf = _cho(A, fit.warnings)
    Ainv_B = linalg.cho_solve(cf, B, check_finite=False)
    V = linalg.cho_solve(cf, Ainv_B.T, check_finite=False)
    return 0.5 * (V + V.T)
