"""Time-varying effect model for the mediator (function-on-scalar regression).

``g(E[M(t) | X, C]) = a0(t) + aX(t) X + sum_j aCj(t) Cj`` with each coefficient
function expanded in a penalized B-spline basis, fitted under working
independence with subject-clustered sandwich standard errors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .data import LongDataset
from .errors import InputError
from .glm import (ClusterStats, GlmFit, LinkFunction, PenaltyBlock, cluster_index,
                  sandwich_covariance, select_lambda, select_lambda_from_stats)
from .splines import BasisSpec, TimeGrid, bspline_basis, difference_penalty


@dataclass
class CurveEstimate:
    """A coefficient function sampled on a grid with pointwise standard errors."""

    t: np.ndarray
    estimate: np.ndarray
    se: np.ndarray

    def band(self, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
        z = normal_multiplier(level)
        return self.estimate - z * self.se, self.estimate + z * self.se


def normal_multiplier(level: float) -> float:
    if not 0 < level < 1:
        raise InputError(f"confidence level must be in (0, 1), got {level}")
    return float(stats.norm.ppf(0.5 + level / 2))


@dataclass
class TvemFit:
    grid: TimeGrid
    alpha0: CurveEstimate
    alphaX: CurveEstimate
    alphaC: dict
    basis_spec: BasisSpec
    chosen_lambda: float
    glm: GlmFit
    covariance: np.ndarray
    link: LinkFunction
    n_subjects: int
    n_records: int
    term_columns: dict = field(default_factory=dict)

    @property
    def curves(self) -> dict:
        """All coefficient functions keyed by term name (``alpha0``, ``alphaX``, ...)."""
        out = {"alpha0": self.alpha0, "alphaX": self.alphaX}
        out.update({f"alpha_{k}": v for k, v in self.alphaC.items()})
        return out


@dataclass
class _Layout:
    """Column layout of the stacked varying-coefficient design."""

    terms: list            # (name, slice, time_varying)
    templates: list        # PenaltyBlock per time-varying term (lambda unset)
    n_cols: int


def _layout(spec: BasisSpec, covariate_names, constant: set) -> _Layout:
    K = spec.num_basis
    P = difference_penalty(spec.penalty_order, K)
    terms, templates, col = [], [], 0
    for name in ["alpha0", "alphaX"] + [f"alpha_{c}" for c in covariate_names]:
        tv = name not in constant
        width = K if tv else 1
        sl = slice(col, col + width)
        terms.append((name, sl, tv))
        if tv:
            templates.append(PenaltyBlock(sl, P))
        col += width
    return _Layout(terms, templates, col)


def _design(B: np.ndarray, data: LongDataset, layout: _Layout) -> np.ndarray:
    rs = data.record_subject
    predictors = [np.ones(rs.size), data.treatment[rs]]
    predictors += [data.covariates[rs, j] for j in range(data.n_covariates)]
    X = np.empty((rs.size, layout.n_cols))
    for (name, sl, tv), v in zip(layout.terms, predictors):
        X[:, sl] = B * v[:, None] if tv else v[:, None]
    return X


def _check(data: LongDataset) -> None:
    if data.n_records == 0:
        raise InputError("dataset has no mediator records")
    counts = data.record_counts()
    if np.any(counts == 0):
        raise InputError("every subject must contribute at least one record; "
                         "filter with LongDataset.filter_min_obs first")
    if np.unique(data.times).size < 2:
        raise InputError("need at least two distinct observation times")
    if np.ptp(data.treatment) == 0:
        raise InputError("treatment is constant across subjects; alphaX is not identified")


def _constant_set(data: LongDataset, constant_covariates) -> set:
    out = set()
    for c in constant_covariates or ():
        if c not in data.covariate_names:
            raise InputError(f"unknown covariate {c!r}")
        out.add(f"alpha_{c}")
    return out


def fit_tvem(data: LongDataset, mediator_link=LinkFunction.IDENTITY,
             spec: BasisSpec | None = None, grid_size: int = 100,
             constant_covariates: Sequence[str] = (), lambda_grid=None,
             per_block: bool = False, criterion: str = "gcv") -> TvemFit:
    """Fit the time-varying effect model.

    Parameters
    ----------
    data : LongDataset
        Every subject must have at least one record.
    mediator_link : LinkFunction or str
    spec : BasisSpec, optional
        Defaults to cubic, 20 interior knots, first-order penalty.
    grid_size : int
        Number of equally spaced evaluation points on ``[t_min, t_max]``.
    constant_covariates : sequence of str
        Covariates whose effect is constrained to be constant over time.
    lambda_grid : array_like, optional
        Candidate smoothing parameters (GCV); default 41 log-spaced values
        in ``[1e-4, 1e4]``.
    per_block : bool
        Select a separate lambda for each coefficient function.
    criterion : {"gcv", "reml"}
        Smoothing-parameter selection criterion.
    """
    link = LinkFunction.parse(mediator_link)
    spec = spec or BasisSpec()
    _check(data)
    layout = _layout(spec, data.covariate_names, _constant_set(data, constant_covariates))
    B = bspline_basis(spec, data.times, data.t_min, data.t_max).values
    X = _design(B, data, layout)
    y = data.mediator
    link.check_response(y)

    stats_ = None
    if link is LinkFunction.IDENTITY:
        stats_ = ClusterStats.from_design(X, y, data.record_subject, data.n_subjects).total()
    sel = select_lambda(X, y, None, link, layout.templates, lambda_grid,
                        per_block=per_block, stats=stats_, criterion=criterion)
    fit = sel.fit
    V = sandwich_covariance(fit, X, y, data.record_subject)
    fit.sandwich_covariance = V

    grid = TimeGrid.regular(data.t_min, data.t_max, grid_size)
    Bg = bspline_basis(spec, grid.points, data.t_min, data.t_max).values
    curves = {}
    for name, sl, tv in layout.terms:
        c = fit.coefficients[sl]
        Vb = V[sl, sl]
        if tv:
            est = Bg @ c
            se = np.sqrt(np.clip(np.einsum("ij,jk,ik->i", Bg, Vb, Bg), 0.0, None))
        else:
            est = np.full(grid.points.size, c[0])
            se = np.full(grid.points.size, np.sqrt(max(Vb[0, 0], 0.0)))
        curves[name] = CurveEstimate(grid.points, est, se)
    alphaC = {c: curves[f"alpha_{c}"] for c in data.covariate_names}
    return TvemFit(grid, curves["alpha0"], curves["alphaX"], alphaC, spec,
                   sel.lambdas[0] if sel.lambdas else 0.0, fit, V, link,
                   data.n_subjects, data.n_records,
                   {name: sl for name, sl, _ in layout.terms})


def tvem_pointwise_ci(fit: TvemFit, level: float = 0.95) -> dict:
    """Pointwise normal-quantile bands ``estimate +/- z * SE`` for every function."""
    normal_multiplier(level)
    return {name: curve.band(level) for name, curve in fit.curves.items()}


class TvemResampler:
    """Refit the treatment-effect function on subject-level bootstrap resamples.

    For the identity link the per-subject sufficient statistics are computed
    once, and a resample with multiplicities ``m`` is refitted (including the
    GCV search) from ``sum_i m_i * stats_i``. Other links rebuild the
    resampled design.
    """

    def __init__(self, data: LongDataset, mediator_link=LinkFunction.IDENTITY,
                 spec: BasisSpec | None = None, grid_size: int = 100,
                 constant_covariates: Sequence[str] = (), lambda_grid=None,
                 criterion: str = "gcv"):
        self.link = LinkFunction.parse(mediator_link)
        self.criterion = criterion
        self.spec = spec or BasisSpec()
        _check(data)
        self.data = data
        self.lambda_grid = lambda_grid
        self.layout = _layout(self.spec, data.covariate_names,
                              _constant_set(data, constant_covariates))
        B = bspline_basis(self.spec, data.times, data.t_min, data.t_max).values
        self.X = _design(B, data, self.layout)
        grid = TimeGrid.regular(data.t_min, data.t_max, grid_size)
        self.Bg = bspline_basis(self.spec, grid.points, data.t_min, data.t_max).values
        self.x_cols = dict((n, s) for n, s, _ in self.layout.terms)["alphaX"]
        self.stats = None
        if self.link is LinkFunction.IDENTITY:
            self.stats = ClusterStats.from_design(self.X, data.mediator, data.record_subject,
                                                  data.n_subjects)

    def alpha_x(self, index) -> np.ndarray:
        """``alphaX`` on the grid for the resample drawing subjects ``index``."""
        index = np.asarray(index, dtype=np.int64)
        n = self.data.n_subjects
        mult = np.bincount(index, minlength=n)
        if np.ptp(self.data.treatment[index]) == 0:
            raise InputError("resample has constant treatment")
        if self.stats is not None:
            _, coef, _, _ = select_lambda_from_stats(self.stats.combine(mult),
                                                     self.layout.templates, self.lambda_grid,
                                                     self.criterion)
        else:
            rows = np.repeat(np.arange(self.data.n_records), mult[self.data.record_subject])
            sel = select_lambda(self.X[rows], self.data.mediator[rows], None, self.link,
                                self.layout.templates, self.lambda_grid,
                                criterion=self.criterion)
            coef = sel.fit.coefficients
        return self.Bg @ coef[self.x_cols]


__all__ = ["CurveEstimate", "TvemFit", "TvemResampler", "fit_tvem", "tvem_pointwise_ci",
           "normal_multiplier", "cluster_index"]
