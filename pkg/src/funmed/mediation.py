"""Two-stage functional mediation: effects, bootstrap test, log-link decomposition."""
from __future__ import annotations

import contextlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats
from threadpoolctl import threadpool_limits

from .data import LongDataset
from .errors import ConvergenceError, FunmedError, InputError
from .funreg import (FUNREG_SPEC, FunregFit, FunregResampler, PresmoothMethod,
                     fit_scalar_on_function, presmooth_subjects)
from .glm import CRITERIA, LinkFunction, fit_penalized_glm
from .splines import BasisSpec
from .tvem import TvemFit, TvemResampler, fit_tvem, normal_multiplier

log = logging.getLogger(__name__)

MAX_FAILED_FRACTION = 0.20


@dataclass(frozen=True)
class MediationConfig:
    mediator_link: LinkFunction = LinkFunction.IDENTITY
    outcome_link: LinkFunction = LinkFunction.LOGIT
    tvem_spec: BasisSpec = field(default_factory=BasisSpec)
    funreg_spec: BasisSpec = FUNREG_SPEC
    grid_size: int = 100
    min_obs: int = 1
    nboot: int = 500
    seed: int = 0
    ci_level: float = 0.95
    presmooth: PresmoothMethod = PresmoothMethod.LINEAR_INTERPOLATION
    constant_covariates: tuple = ()
    lambda_grid: tuple | None = None
    tvem_criterion: str = "gcv"
    funreg_criterion: str = "reml"
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mediator_link", LinkFunction.parse(self.mediator_link))
        object.__setattr__(self, "outcome_link", LinkFunction.parse(self.outcome_link))
        object.__setattr__(self, "presmooth", PresmoothMethod.parse(self.presmooth))
        if self.nboot < 1:
            raise InputError("nboot must be >= 1")
        if not 0 < self.ci_level < 1:
            raise InputError("ci_level must be in (0, 1)")
        if self.grid_size < 10:
            raise InputError("grid_size must be >= 10")
        if self.min_obs < 0:
            raise InputError("min_obs must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise InputError("seed must be a 64-bit unsigned integer")
        for name in ("tvem_criterion", "funreg_criterion"):
            value = str(getattr(self, name)).lower()
            if value not in CRITERIA:
                raise InputError(f"{name} must be one of {CRITERIA}, got {value!r}")
            object.__setattr__(self, name, value)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("mediator_link", "outcome_link", "presmooth"):
            d[k] = getattr(self, k).value
        d["lambda_grid"] = None if self.lambda_grid is None else list(self.lambda_grid)
        d["constant_covariates"] = list(self.constant_covariates)
        return d


@dataclass
class TotalEffect:
    estimate: float
    se: float
    z: float
    p_value: float
    converged: bool = True


@dataclass
class MediationResult:
    total_effect: TotalEffect
    direct_effect: tuple       # (estimate, se)
    indirect_effect: float
    tvem_fit: TvemFit
    funreg_fit: FunregFit
    t_min: float
    t_max: float
    n_subjects: int
    dropped_ids: list = field(default_factory=list)

    @property
    def n_dropped(self) -> int:
        return len(self.dropped_ids)

    @property
    def decomposition_gap(self) -> float:
        """``TE - (DE + IE)`` on the linear-predictor scale; reported, never tested."""
        return self.total_effect.estimate - (self.direct_effect[0] + self.indirect_effect)

    def recompute_indirect(self) -> float:
        return indirect_effect(self.tvem_fit.alphaX.estimate, self.funreg_fit.betaM.estimate,
                               self.t_min, self.t_max)


def indirect_effect(alphaX, betaM, t_min: float, t_max: float) -> float:
    """Grid mean of ``alphaX * betaM`` times the interval width."""
    a = np.asarray(alphaX, dtype=np.float64)
    b = np.asarray(betaM, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise InputError(f"alphaX and betaM must be equal-length grids, got {a.shape} and {b.shape}")
    return float(np.mean(a * b) * (t_max - t_min))


def fit_total_effect(treatment, covariates, outcome, link=LinkFunction.LOGIT) -> TotalEffect:
    """Unpenalized GLM of the outcome on treatment and covariates.

    Returns the treatment coefficient with its model-based SE, the z statistic
    and the two-sided normal p-value.
    """
    link = LinkFunction.parse(link)
    x = np.asarray(treatment, dtype=np.float64)
    n = x.size
    C = np.zeros((n, 0)) if covariates is None else np.asarray(covariates, dtype=np.float64)
    X = np.column_stack([np.ones(n), x, C.reshape(n, -1)])
    fit = fit_penalized_glm(X, outcome, link=link)
    est = float(fit.coefficients[1])
    se = float(fit.model_se[1])
    z = est / se if se > 0 else math.copysign(np.inf, est) if est else 0.0
    p = float(2.0 * stats.norm.sf(abs(z)))
    return TotalEffect(est, se, float(z), p, fit.converged)


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except FunmedError as exc:
        raise type(exc)(f"{name} stage: {exc}") from exc


def _prepare(data: LongDataset, config: MediationConfig):
    kept, dropped = data.filter_min_obs(config.min_obs)
    if kept.n_subjects == 0:
        raise InputError("no subjects left after the minimum-observation filter")
    if np.any(~np.isin(kept.treatment, (0.0, 1.0))):
        raise InputError("treatment must be coded 0/1")
    return kept, dropped


def fit_funmediation(data: LongDataset, config: MediationConfig | None = None) -> MediationResult:
    """Fit both stages, the total-effect model and the integrated indirect effect."""
    config = config or MediationConfig()
    kept, dropped = _prepare(data, config)
    with _stage("tvem"):
        tv = fit_tvem(kept, config.mediator_link, config.tvem_spec, config.grid_size,
                      config.constant_covariates, config.lambda_grid,
                      criterion=config.tvem_criterion)
    with _stage("presmoothing"):
        curves = presmooth_subjects(kept, config.grid_size, config.presmooth, min_obs=1)
    with _stage("funreg"):
        fr = fit_scalar_on_function(curves, kept.treatment, kept.covariates, kept.outcome,
                                    config.outcome_link, config.funreg_spec, config.lambda_grid,
                                    kept.covariate_names, config.funreg_criterion)
    with _stage("total effect"):
        te = fit_total_effect(kept.treatment, kept.covariates, kept.outcome, config.outcome_link)
    ie = indirect_effect(tv.alphaX.estimate, fr.betaM.estimate, kept.t_min, kept.t_max)
    return MediationResult(te, fr.betaX, ie, tv, fr, kept.t_min, kept.t_max, kept.n_subjects,
                           dropped)


# -- bootstrap ---------------------------------------------------------------

@dataclass
class BootstrapResult:
    estimate: float
    replicates: np.ndarray       # successful replicates, in draw order
    all_replicates: np.ndarray   # NaN where the refit failed
    ci_normal: tuple
    ci_basic: tuple
    ci_percentile: tuple
    p_value: float
    n_failed: int
    level: float

    @property
    def nboot(self) -> int:
        return self.all_replicates.size

    @property
    def sd(self) -> float:
        r = self.replicates
        return float(np.std(r, ddof=1)) if r.size > 1 else 0.0


def percentile_ranks(n: int, level: float) -> tuple[int, int]:
    """1-based order-statistic ranks ``ceil(a/2 (B+1))`` and ``ceil((1-a/2)(B+1))``."""
    alpha = 1.0 - level
    lo = math.ceil(round(alpha / 2 * (n + 1), 9))
    hi = math.ceil(round((1 - alpha / 2) * (n + 1), 9))
    return min(max(lo, 1), n), min(max(hi, 1), n)


def bootstrap_intervals(estimate: float, replicates, level: float = 0.95) -> dict:
    """Normal, basic and percentile intervals plus the percentile-inversion p-value.

    The p-value is the smallest ``a = 2k/(B+1)`` at which the ``1 - a``
    percentile interval excludes zero: ``min(1, 2 (min(#{r <= 0}, #{r >= 0}) + 1) / (B+1))``.
    """
    r = np.sort(np.asarray(replicates, dtype=np.float64))
    if r.size == 0:
        raise InputError("no bootstrap replicates")
    normal_multiplier(level)
    n = r.size
    lo_rank, hi_rank = percentile_ranks(n, level)
    pct = (float(r[lo_rank - 1]), float(r[hi_rank - 1]))
    sd = float(np.std(r, ddof=1)) if n > 1 else 0.0
    z = normal_multiplier(level)
    normal = (estimate - z * sd, estimate + z * sd)
    basic = (2 * estimate - pct[1], 2 * estimate - pct[0])
    k = min(int(np.sum(r <= 0)), int(np.sum(r >= 0)))
    p = min(1.0, 2.0 * (k + 1) / (n + 1))
    return {"normal": normal, "basic": basic, "percentile": pct, "p_value": p}


def resample_indices(n_subjects: int, nboot: int, seed: int) -> np.ndarray:
    """All bootstrap index sets, drawn sequentially from one generator."""
    rng = np.random.default_rng(seed)
    return np.stack([rng.integers(0, n_subjects, n_subjects) for _ in range(nboot)]) \
        if nboot else np.zeros((0, n_subjects), dtype=np.int64)


class _Replicator:
    """Holds the per-dataset precomputation shared by all replicates."""

    def __init__(self, kept: LongDataset, config: MediationConfig):
        self.tvem = TvemResampler(kept, config.mediator_link, config.tvem_spec, config.grid_size,
                                  config.constant_covariates, config.lambda_grid,
                                  config.tvem_criterion)
        curves = presmooth_subjects(kept, config.grid_size, config.presmooth, min_obs=1)
        self.funreg = FunregResampler(curves, kept.treatment, kept.covariates, kept.outcome,
                                      config.outcome_link, config.funreg_spec,
                                      config.lambda_grid, config.funreg_criterion)
        self.t_min, self.t_max = kept.t_min, kept.t_max

    def __call__(self, index) -> float:
        import warnings

        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                ax = self.tvem.alpha_x(index)
                bm, fit = self.funreg.beta_m(index)
        except FunmedError as exc:
            log.debug("bootstrap replicate failed: %s", exc)
            return float("nan")
        if not fit.converged or not np.all(np.isfinite(bm)):
            return float("nan")
        return indirect_effect(ax, bm, self.t_min, self.t_max)


_WORKER: _Replicator | None = None


def _init_worker(kept, config):
    global _WORKER
    with threadpool_limits(1):
        _WORKER = _Replicator(kept, config)


def _run_chunk(indices) -> list[float]:
    with threadpool_limits(1):
        return [_WORKER(ix) for ix in indices]


def run_replicates(kept: LongDataset, config: MediationConfig, indices, n_jobs: int = 1):
    """Evaluate the indirect effect for each resample; NaN marks a failed refit.

    BLAS is pinned to one thread in every execution mode so the replicate
    vector does not depend on ``n_jobs``.
    """
    if n_jobs <= 1:
        with threadpool_limits(1):
            rep = _Replicator(kept, config)
            return np.array([rep(ix) for ix in indices])
    chunks = np.array_split(np.asarray(indices), max(1, min(len(indices), 4 * n_jobs)))
    with ProcessPoolExecutor(n_jobs, initializer=_init_worker, initargs=(kept, config)) as ex:
        parts = list(ex.map(_run_chunk, [list(c) for c in chunks]))
    return np.array([v for p in parts for v in p])


def bootstrap_mediation(data: LongDataset, config: MediationConfig | None = None,
                        result: MediationResult | None = None,
                        n_jobs: int | None = None) -> BootstrapResult:
    """Subject-level nonparametric bootstrap of the indirect effect.

    Resample index sets are drawn up front from ``config.seed``; every
    replicate refits both stages (smoothing parameters included).
    Failed refits are dropped and counted; more than 20% failures raises
    :class:`ConvergenceError`.
    """
    config = config or MediationConfig()
    kept, _ = _prepare(data, config)
    if result is None:
        result = fit_funmediation(data, config)
    if config.nboot < 39 and config.ci_level >= 0.95:
        log.warning("nboot=%d is too small for a %.0f%% percentile interval",
                    config.nboot, 100 * config.ci_level)
    indices = resample_indices(kept.n_subjects, config.nboot, config.seed)
    allrep = run_replicates(kept, config, indices, config.n_jobs if n_jobs is None else n_jobs)
    ok = np.isfinite(allrep)
    n_failed = int(np.sum(~ok))
    if n_failed > MAX_FAILED_FRACTION * config.nboot:
        raise ConvergenceError(
            f"{n_failed} of {config.nboot} bootstrap refits failed; use a larger sample "
            "or a less flexible model")
    iv = bootstrap_intervals(result.indirect_effect, allrep[ok], config.ci_level)
    return BootstrapResult(result.indirect_effect, allrep[ok], allrep, iv["normal"], iv["basic"],
                           iv["percentile"], iv["p_value"], n_failed, config.ci_level)


# -- log-link decomposition ----------------------------------------------------

def log_link_decomposition(alpha0, alphaX, betaX: float, betaM, t_min: float, t_max: float,
                           beta0: float = 0.0) -> dict:
    """Potential-outcome log means under a log link and the implied effects.

    ``log E[Y(x, M(x'))] = b0 + bX x + int bM(t) (a0(t) + aX(t) x') dt``; each
    integral is a grid mean times the interval width.
    """
    a0 = np.asarray(alpha0, dtype=np.float64)
    ax = np.asarray(alphaX, dtype=np.float64)
    bm = np.asarray(betaM, dtype=np.float64)
    if not a0.shape == ax.shape == bm.shape:
        raise InputError("alpha0, alphaX and betaM must share one grid")
    width = t_max - t_min

    def log_mean(x, x_med):
        return beta0 + betaX * x + float(np.mean(bm * (a0 + ax * x_med))) * width

    log_te = log_mean(1, 1) - log_mean(0, 0)
    log_de = log_mean(1, 0) - log_mean(0, 0)
    log_ie = log_mean(1, 1) - log_mean(1, 0)
    return {"log_te": log_te, "log_de": log_de, "log_ie": log_ie,
            "te_ratio": math.exp(log_te), "de_ratio": math.exp(log_de),
            "ie_ratio": math.exp(log_ie)}


def log_link_decomposition_check(alpha0, alphaX, betaX: float, betaM, t_min: float,
                                 t_max: float) -> float:
    """``|log TE - (log DE + log IE)|`` from :func:`log_link_decomposition`."""
    d = log_link_decomposition(alpha0, alphaX, betaX, betaM, t_min, t_max)
    return abs(d["log_te"] - (d["log_de"] + d["log_ie"]))
