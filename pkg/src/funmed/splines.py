"""B-spline bases on a time interval and difference penalties (P-splines)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DomainError, InputError

# evaluation times this close to the ends (relative to the width) are clipped
_EDGE_TOL = 1e-10


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing evaluation times inside ``[t_min, t_max]``."""

    points: np.ndarray
    t_min: float
    t_max: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if not self.t_min < self.t_max:
            raise InputError(f"degenerate interval [{self.t_min}, {self.t_max}]")
        if pts.ndim != 1 or pts.size == 0:
            raise InputError("grid points must be a non-empty 1-d sequence")
        if np.any(np.diff(pts) <= 0):
            raise InputError("grid points must be strictly increasing")
        if pts[0] < self.t_min or pts[-1] > self.t_max:
            raise DomainError("grid points fall outside [t_min, t_max]")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def regular(cls, t_min: float, t_max: float, size: int) -> "TimeGrid":
        """``size`` equally spaced points spanning ``[t_min, t_max]``."""
        if size < 2:
            raise InputError("a regular grid needs at least 2 points")
        return cls(np.linspace(t_min, t_max, size), float(t_min), float(t_max))

    @property
    def width(self) -> float:
        return self.t_max - self.t_min

    def __len__(self) -> int:
        return self.points.size


@dataclass(frozen=True)
class BasisSpec:
    """Degree, number of equidistant interior knots and penalty order."""

    degree: int = 3
    interior_knots: int = 20
    penalty_order: int = 1

    def __post_init__(self):
        if self.degree < 1:
            raise InputError(f"degree must be >= 1, got {self.degree}")
        if self.interior_knots < 0:
            raise InputError(f"interior_knots must be >= 0, got {self.interior_knots}")
        if self.penalty_order not in (1, 2):
            raise InputError(f"penalty_order must be 1 or 2, got {self.penalty_order}")

    @property
    def num_basis(self) -> int:
        return self.interior_knots + self.degree + 1


@dataclass(frozen=True)
class BasisMatrix:
    values: np.ndarray
    spec: BasisSpec
    grid: TimeGrid | None = field(default=None, compare=False)

    @property
    def num_basis(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PenaltyMatrix:
    values: np.ndarray
    order: int

    @property
    def size(self) -> int:
        return self.values.shape[0]


def knot_vector(spec: BasisSpec, t_min: float, t_max: float) -> np.ndarray:
    """Clamped knot vector with equidistant interior knots."""
    if not t_min < t_max:
        raise InputError(f"degenerate interval [{t_min}, {t_max}]")
    inner = np.linspace(t_min, t_max, spec.interior_knots + 2)
    return np.concatenate([
        np.full(spec.degree, float(t_min)),
        inner,
        np.full(spec.degree, float(t_max)),
    ])


def bspline_basis(spec: BasisSpec, eval_times, t_min: float, t_max: float) -> BasisMatrix:
    """Evaluate the clamped B-spline basis at ``eval_times``.

    Parameters
    ----------
    spec : BasisSpec
        Degree and interior knot count; the basis has
        ``interior_knots + degree + 1`` columns.
    eval_times : array_like
        Times in ``[t_min, t_max]``.
    t_min, t_max : float
        Interval ends (boundary knots of multiplicity ``degree + 1``).

    Returns
    -------
    BasisMatrix
        Rows are evaluation times. Rows sum to one.

    Raises
    ------
    InputError
        If ``t_min >= t_max``.
    DomainError
        If any evaluation time lies outside the interval.
    """
    if not t_min < t_max:
        raise InputError(f"degenerate interval [{t_min}, {t_max}]")
    x = np.atleast_1d(np.asarray(eval_times, dtype=np.float64))
    if x.ndim != 1:
        raise InputError("eval_times must be one-dimensional")
    if not np.all(np.isfinite(x)):
        raise InputError("eval_times contain non-finite values")
    slack = _EDGE_TOL * (t_max - t_min)
    if x.size and (x.min() < t_min - slack or x.max() > t_max + slack):
        bad = x[(x < t_min - slack) | (x > t_max + slack)][0]
        raise DomainError(f"evaluation time {bad!r} outside [{t_min}, {t_max}]")
    x = np.clip(x, t_min, t_max)
    knots = knot_vector(spec, t_min, t_max)
    values = kernels.bspline_design(knots, spec.degree, x)
    grid = None
    if x.size and np.all(np.diff(x) > 0):
        grid = TimeGrid(x, float(t_min), float(t_max))
    return BasisMatrix(values, spec, grid)


def difference_penalty(order: int, num_basis: int) -> PenaltyMatrix:
    """``D'D`` for the ``order``-th difference matrix ``D`` on ``num_basis`` coefficients."""
    if order < 1:
        raise InputError(f"penalty order must be >= 1, got {order}")
    if order >= num_basis:
        raise InputError(f"penalty order {order} needs more than {num_basis} basis functions")
    D = np.diff(np.eye(num_basis), n=order, axis=0)
    return PenaltyMatrix(D.T @ D, order)


def evaluate_curve(coeffs, basis: BasisMatrix) -> np.ndarray:
    """Sample the spline with coefficients ``coeffs`` at the basis' times."""
    c = np.asarray(coeffs, dtype=np.float64)
    if c.ndim != 1 or c.size != basis.num_basis:
        raise InputError(
            f"expected {basis.num_basis} coefficients, got shape {c.shape}")
    return basis.values @ c


def trapezoid_weights(t) -> np.ndarray:
    """Quadrature weights ``w`` with ``sum(w * f(t))`` the trapezoid integral."""
    t = np.asarray(t, dtype=np.float64)
    h = np.diff(t)
    w = np.zeros(t.size)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w
