"""Presmoothing of subject trajectories and scalar-on-function regression.

``g(E[Y | X, C, M]) = b0 + bX X + C bC + int bM(t) M(t) dt`` with ``bM``
expanded in a penalized B-spline basis; the integral is computed by the
trapezoid rule on a common dense grid of presmoothed curves.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import LongDataset
from .errors import InputError
from .glm import (GaussianStats, GlmFit, LinkFunction, PenaltyBlock, penalty_total,
                  select_lambda, select_lambda_from_stats, solve_gaussian_stats)
from .splines import (BasisMatrix, BasisSpec, TimeGrid, bspline_basis, difference_penalty,
                      trapezoid_weights)
from .tvem import CurveEstimate

log = logging.getLogger(__name__)

#: coefficient-function basis for the outcome model
FUNREG_SPEC = BasisSpec(degree=3, interior_knots=20, penalty_order=2)
#: per-subject presmoothing spline
PRESMOOTH_SPEC = BasisSpec(degree=3, interior_knots=10, penalty_order=2)


class PresmoothMethod(enum.Enum):
    LINEAR_INTERPOLATION = "linear"
    PER_SUBJECT_SPLINE = "spline"

    @classmethod
    def parse(cls, value) -> "PresmoothMethod":
        if isinstance(value, cls):
            return value
        aliases = {"linear_interpolation": "linear", "per_subject_spline": "spline"}
        v = str(value).lower()
        try:
            return cls(aliases.get(v, v))
        except ValueError:
            raise InputError(f"unknown presmoothing method {value!r}") from None


@dataclass
class SubjectCurves:
    grid: TimeGrid
    curves: np.ndarray          # (N, G)
    observed_range: np.ndarray  # (N, 2) first/last observed time
    method: PresmoothMethod
    ids: np.ndarray
    dropped: list = field(default_factory=list)

    @property
    def n_subjects(self) -> int:
        return self.curves.shape[0]


def _spline_curve(t, m, grid: TimeGrid, spec: BasisSpec, lam, lambda_grid) -> np.ndarray:
    B = bspline_basis(spec, t, grid.t_min, grid.t_max).values
    P = PenaltyBlock(slice(0, spec.num_basis), difference_penalty(spec.penalty_order,
                                                                   spec.num_basis))
    stats = GaussianStats.from_design(B, m)
    if lam is None:
        _, coef, _, _ = select_lambda_from_stats(stats, [P], lambda_grid)
    else:
        coef = solve_gaussian_stats(stats, penalty_total(spec.num_basis, [P.with_lambda(lam)]))[0]
    Bg = bspline_basis(spec, grid.points, grid.t_min, grid.t_max).values
    return Bg @ coef


def presmooth_subjects(data: LongDataset, grid_size: int = 100, method="linear",
                       min_obs: int = 1, spline_spec: BasisSpec | None = None,
                       spline_lambda: float | None = None, lambda_grid=None) -> SubjectCurves:
    """Put every subject's trajectory on a common grid.

    Parameters
    ----------
    data : LongDataset
    grid_size : int
        Points of the equally spaced grid on ``[t_min, t_max]``.
    method : {"linear", "spline"}
        ``linear``: piecewise-linear interpolation through the observed
        points, held constant beyond the first/last observation.
        ``spline``: penalized cubic spline per subject (lambda chosen by GCV
        unless ``spline_lambda`` is given); needs >= 2 records per subject.
    min_obs : int
        Subjects with fewer records are dropped (count logged). Subjects with
        no records are always dropped.
    """
    method = PresmoothMethod.parse(method)
    kept, dropped = data.filter_min_obs(min_obs)
    if kept.n_subjects == 0:
        raise InputError("no subjects left after the minimum-observation filter")
    grid = TimeGrid.regular(data.t_min, data.t_max, grid_size)
    spec = spline_spec or PRESMOOTH_SPEC
    curves = np.empty((kept.n_subjects, grid_size))
    rng = np.empty((kept.n_subjects, 2))
    for i, sl in enumerate(kept.record_slices()):
        t = kept.times[sl]
        m = kept.mediator[sl]
        rng[i] = t[0], t[-1]
        if method is PresmoothMethod.LINEAR_INTERPOLATION:
            curves[i] = np.interp(grid.points, t, m)
        else:
            if t.size < 2:
                raise InputError(f"subject {kept.ids[i]!r} has {t.size} record(s); "
                                 "spline presmoothing needs at least 2 (raise min_obs)")
            curves[i] = _spline_curve(t, m, grid, spec, spline_lambda, lambda_grid)
    return SubjectCurves(grid, curves, rng, method, kept.ids, dropped)


def integral_design(curves: SubjectCurves, basis: BasisMatrix) -> np.ndarray:
    """``z[i, k] = int B_k(t) M_i(t) dt`` by the trapezoid rule on the curves' grid."""
    B = basis.values
    G = curves.grid.points.size
    if B.shape[0] != G:
        raise InputError(f"basis has {B.shape[0]} rows but the curve grid has {G} points")
    if basis.grid is not None and not np.allclose(basis.grid.points, curves.grid.points,
                                                  rtol=0, atol=1e-12):
        raise InputError("basis was evaluated on a different grid than the curves")
    w = trapezoid_weights(curves.grid.points)
    return curves.curves @ (w[:, None] * B)


@dataclass
class FunregFit:
    beta0: tuple
    betaX: tuple
    betaC: dict
    betaM: CurveEstimate
    link: LinkFunction
    chosen_lambda: float
    glm: GlmFit
    grid: TimeGrid
    spec: BasisSpec

    def linear_predictor(self, design) -> np.ndarray:
        return np.asarray(design) @ self.glm.coefficients


def _funreg_design(Z, treatment, covariates):
    n = Z.shape[0]
    C = np.zeros((n, 0)) if covariates is None else np.asarray(covariates, dtype=np.float64)
    C = C.reshape(n, -1)
    return np.column_stack([np.ones(n), np.asarray(treatment, dtype=np.float64), C, Z]), C.shape[1]


def _check_identifiable(Z) -> None:
    scale = max(1.0, float(np.max(np.abs(Z))))
    if float(np.max(np.ptp(Z, axis=0))) <= 1e-12 * scale:
        raise InputError("curves do not vary across subjects; the mediator effect "
                         "function is not identified")


def fit_scalar_on_function(curves: SubjectCurves, treatment, covariates, outcome,
                           link=LinkFunction.LOGIT, spec: BasisSpec | None = None,
                           lambda_grid=None, covariate_names=(),
                           criterion: str = "reml") -> FunregFit:
    """Penalized GLM of the outcome on ``[1, X, C, z]`` with ``z = integral_design``.

    The difference penalty acts on the ``bM`` coefficients only; its weight is
    chosen by ``criterion`` (``"reml"`` or ``"gcv"``) over ``lambda_grid``.
    Pointwise SEs of ``bM(t)`` use the model-based (penalized) covariance;
    one outcome per subject, so no clustering.
    """
    link = LinkFunction.parse(link)
    spec = spec or FUNREG_SPEC
    y = np.asarray(outcome, dtype=np.float64)
    n = curves.n_subjects
    if y.size != n or np.asarray(treatment).size != n:
        raise InputError("treatment/outcome length does not match the number of curves")
    link.check_response(y)
    if link is LinkFunction.LOGIT and np.any((y != 0) & (y != 1)):
        raise InputError("a logit outcome model needs a 0/1 outcome")
    grid = curves.grid
    basis = bspline_basis(spec, grid.points, grid.t_min, grid.t_max)
    Z = integral_design(curves, basis)
    _check_identifiable(Z)
    X, q = _funreg_design(Z, treatment, covariates)
    zc = slice(2 + q, 2 + q + spec.num_basis)
    tmpl = [PenaltyBlock(zc, difference_penalty(spec.penalty_order, spec.num_basis))]
    sel = select_lambda(X, y, None, link, tmpl, lambda_grid, criterion=criterion)
    fit = sel.fit
    V = fit.model_covariance
    c = fit.coefficients
    se = fit.model_se
    Bg = basis.values
    bm = Bg @ c[zc]
    bm_se = np.sqrt(np.clip(np.einsum("ij,jk,ik->i", Bg, V[zc, zc], Bg), 0.0, None))
    names = tuple(covariate_names) or tuple(f"C{j + 1}" for j in range(q))
    betaC = {names[j]: (float(c[2 + j]), float(se[2 + j])) for j in range(q)}
    return FunregFit((float(c[0]), float(se[0])), (float(c[1]), float(se[1])), betaC,
                     CurveEstimate(grid.points, bm, bm_se), link, sel.lambdas[0], fit,
                     grid, spec)


class FunregResampler:
    """Refit ``bM`` on subject-level resamples, reusing the integral design."""

    def __init__(self, curves: SubjectCurves, treatment, covariates, outcome,
                 link=LinkFunction.LOGIT, spec: BasisSpec | None = None, lambda_grid=None,
                 criterion: str = "reml"):
        self.link = LinkFunction.parse(link)
        self.spec = spec or FUNREG_SPEC
        grid = curves.grid
        self.Bg = bspline_basis(self.spec, grid.points, grid.t_min, grid.t_max).values
        Z = integral_design(curves, BasisMatrix(self.Bg, self.spec))
        self.X, q = _funreg_design(Z, treatment, covariates)
        self.y = np.asarray(outcome, dtype=np.float64)
        self.zc = slice(2 + q, 2 + q + self.spec.num_basis)
        self.templates = [PenaltyBlock(self.zc, difference_penalty(self.spec.penalty_order,
                                                                   self.spec.num_basis))]
        self.lambda_grid = lambda_grid
        self.criterion = criterion

    def beta_m(self, index) -> tuple[np.ndarray, GlmFit]:
        index = np.asarray(index, dtype=np.int64)
        X = self.X[index]
        _check_identifiable(X[:, self.zc])
        sel = select_lambda(X, self.y[index], None, self.link, self.templates, self.lambda_grid,
                            criterion=self.criterion)
        return self.Bg @ sel.fit.coefficients[self.zc], sel.fit
