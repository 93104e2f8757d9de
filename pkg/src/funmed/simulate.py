"""Synthetic data generator and Monte Carlo performance study.

Default scenario: binary treatment with probability 1/2; mediator on the
100-point grid 0.00, 0.01, ..., 0.99 with mean ``sqrt(t) - sqrt(t/2) X`` plus
Gaussian AR(1) noise (sd 2, adjacent-point correlation 0.8); 60% of the grid
observations deleted at random; binary outcome with
``logit P(Y=1) = 0 + 0.2 X + int (exp(t) - 1)/2 M(t) dt``.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .data import LongDataset
from .errors import FunmedError, InputError
from .glm import LinkFunction
from .splines import trapezoid_weights

log = logging.getLogger(__name__)


def default_alpha0(t):
    return np.sqrt(t)


def default_alpha_x(t):
    return -np.sqrt(np.asarray(t) / 2.0)


def default_beta_m(t):
    return 0.5 * (np.exp(t) - 1.0)


def zero_function(t):
    return np.zeros_like(np.asarray(t, dtype=np.float64))


@dataclass(frozen=True)
class Scenario:
    n_subjects: int = 500
    grid_points: int = 100
    grid_step: float = 0.01
    missing_rate: float = 0.6
    alpha0: Callable = default_alpha0
    alphaX: Callable = default_alpha_x
    mediator_noise_sd: float = 2.0
    ar1_corr: float = 0.8
    beta0: float = 0.0
    betaX: float = 0.2
    betaM: Callable = default_beta_m
    outcome_link: LinkFunction = LinkFunction.LOGIT
    outcome_noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "outcome_link", LinkFunction.parse(self.outcome_link))
        if self.n_subjects < 1:
            raise InputError("n_subjects must be >= 1")
        if self.grid_points < 2:
            raise InputError("grid_points must be >= 2")
        if not 0 <= self.missing_rate < 1:
            raise InputError("missing_rate must be in [0, 1)")
        if not abs(self.ar1_corr) < 1:
            raise InputError("|ar1_corr| must be < 1")
        if not self.mediator_noise_sd > 0:
            raise InputError("mediator_noise_sd must be > 0")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.grid_points) * self.grid_step

    def describe(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if not callable(v)}
        d["outcome_link"] = self.outcome_link.value
        for k in ("alpha0", "alphaX", "betaM"):
            d[k] = getattr(getattr(self, k), "__name__", repr(getattr(self, k)))
        return d


def ar1_noise(rng: np.random.Generator, n: int, g: int, sd: float, rho: float) -> np.ndarray:
    """Stationary Gaussian AR(1) rows with marginal sd ``sd`` and lag-1 correlation ``rho``."""
    z = rng.standard_normal((n, g))
    e = np.empty((n, g))
    e[:, 0] = sd * z[:, 0]
    innov = sd * math.sqrt(1.0 - rho * rho)
    for j in range(1, g):
        e[:, j] = rho * e[:, j - 1] + innov * z[:, j]
    return e


def generate_complete(scenario: Scenario):
    """Latent complete data: ``(X, M (n x G), keep-mask, Y)``."""
    rng = np.random.default_rng(scenario.seed)
    n, t = scenario.n_subjects, scenario.times
    x = (rng.random(n) < 0.5).astype(np.float64)
    mean = scenario.alpha0(t)[None, :] + np.outer(x, scenario.alphaX(t))
    m = mean + ar1_noise(rng, n, t.size, scenario.mediator_noise_sd, scenario.ar1_corr)
    keep = rng.random((n, t.size)) >= scenario.missing_rate
    eta = scenario.beta0 + scenario.betaX * x + m @ (trapezoid_weights(t) * scenario.betaM(t))
    link = scenario.outcome_link
    if link is LinkFunction.LOGIT:
        y = (rng.random(n) < link.inverse(eta)).astype(np.float64)
    elif link is LinkFunction.LOG:
        y = rng.poisson(np.exp(eta)).astype(np.float64)
    else:
        y = eta + scenario.outcome_noise_sd * rng.standard_normal(n)
    return x, m, keep, y


def generate_dataset(scenario: Scenario) -> LongDataset:
    """Simulate one dataset (deterministic in ``scenario.seed``).

    Subjects whose observations were all deleted are kept with zero records.
    """
    x, m, keep, y = generate_complete(scenario)
    t = scenario.times
    subj, col = np.nonzero(keep)
    ids = np.array([str(i + 1) for i in range(scenario.n_subjects)], dtype=object)
    return LongDataset(ids, x, np.zeros((scenario.n_subjects, 0)), y, subj, t[col],
                       m[subj, col], float(t[0]), float(t[-1]))


def true_indirect_effect(scenario: Scenario | None = None, n_points: int = 10_000,
                         t_min: float = 0.0, t_max: float = 1.0) -> float:
    """``int alphaX(t) betaM(t) dt`` over ``[t_min, t_max]`` by the trapezoid rule."""
    scenario = scenario or Scenario()
    t = np.linspace(t_min, t_max, n_points)
    return float(np.sum(trapezoid_weights(t) * scenario.alphaX(t) * scenario.betaM(t)))


# -- Monte Carlo study --------------------------------------------------------

FUNCTION_MEASURES = ("Bias", "Mean squared error", "Root mean squared error",
                     "Mean estimated SE", "Pointwise coverage", "Familywise coverage")
SCALAR_MEASURES = ("Bias", "Mean squared error", "Root mean squared error",
                   "Mean estimated SE", "Coverage")
CI_METHODS = ("normal", "basic", "percentile")


def replication_seed(master_seed: int, rep: int, stream: int = 0) -> int:
    """Counter-based child seed: independent of execution order."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(rep), int(stream)))
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass
class ReplicationResult:
    rep: int
    ok: bool
    error: str = ""
    curves: dict = field(default_factory=dict)   # name -> (estimate, se)
    scalars: dict = field(default_factory=dict)  # name -> (estimate, se)
    indirect: float = float("nan")
    boot_sd: float = float("nan")
    cis: dict = field(default_factory=dict)      # method -> (lower, upper)
    seconds: float = 0.0


def _run_one(args) -> ReplicationResult:
    from .mediation import bootstrap_mediation, fit_funmediation

    scenario, rep, master_seed, nboot, config = args
    t0 = time.perf_counter()
    sc = replace(scenario, seed=replication_seed(master_seed, rep, 0))
    try:
        data = generate_dataset(sc)
        cfg = replace(config, seed=replication_seed(master_seed, rep, 1), nboot=max(nboot, 1))
        res = fit_funmediation(data, cfg)
        out = ReplicationResult(rep, True)
        out.curves = {
            "alpha0": (res.tvem_fit.alpha0.estimate, res.tvem_fit.alpha0.se),
            "alphaX": (res.tvem_fit.alphaX.estimate, res.tvem_fit.alphaX.se),
            "betaM": (res.funreg_fit.betaM.estimate, res.funreg_fit.betaM.se),
        }
        out.scalars = {"beta0": res.funreg_fit.beta0, "betaX": res.funreg_fit.betaX}
        out.indirect = res.indirect_effect
        if nboot > 0:
            boot = bootstrap_mediation(data, cfg, result=res)
            out.boot_sd = boot.sd
            out.cis = {"normal": boot.ci_normal, "basic": boot.ci_basic,
                       "percentile": boot.ci_percentile}
    except FunmedError as exc:
        out = ReplicationResult(rep, False, f"{type(exc).__name__}: {exc}")
    out.seconds = time.perf_counter() - t0
    return out


@dataclass
class StudyReport:
    """Aggregated performance measures.

    ``tables`` maps a quantity name to ``{measure: value}``. Functions are
    averaged over the evaluation grid; pointwise coverage is the grid average
    of per-point coverage and familywise coverage the fraction of
    replications whose band covers the truth at every grid point.
    """

    n_subjects: int
    n_datasets: int
    n_successful: int
    n_failed: int
    nboot: int
    ci_level: float
    true_indirect: float
    tables: dict
    counts: dict
    scenario: dict
    seconds: float = 0.0
    failures: list = field(default_factory=list)

    def rows(self) -> list[dict]:
        """Flat rows: one per quantity (CSV layout)."""
        cols = self.columns()
        out = []
        for q, meas in self.tables.items():
            row = {"quantity": q, "n_subjects": self.n_subjects,
                   "n_successful": self.n_successful}
            row.update({c: meas.get(c, "") for c in cols})
            out.append(row)
        return out

    @staticmethod
    def columns() -> list[str]:
        cols = list(FUNCTION_MEASURES) + ["Coverage"]
        cols += [f"{m.capitalize()} coverage" for m in CI_METHODS]
        cols += [f"{m.capitalize()} power" for m in CI_METHODS]
        return cols

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rows"] = self.rows()
        return d

    def render(self) -> str:
        """Plain-text performance tables, one block per quantity."""
        lines = [f"N = {self.n_subjects}; replications: {self.n_successful} ok, "
                 f"{self.n_failed} failed; bootstrap replicates: {self.nboot}"]
        for q, meas in self.tables.items():
            lines.append("")
            lines.append(q)
            for k, v in meas.items():
                lines.append(f"  {k:<26s} {v: .4f}")
        return "\n".join(lines)


def _aggregate(scenario: Scenario, results: list[ReplicationResult], nboot: int,
               ci_level: float, grid: np.ndarray) -> tuple[dict, dict]:
    from .tvem import normal_multiplier

    z = normal_multiplier(ci_level)
    ok = [r for r in results if r.ok]
    truths = {"alpha0": scenario.alpha0(grid), "alphaX": scenario.alphaX(grid),
              "betaM": scenario.betaM(grid)}
    scalar_truth = {"beta0": scenario.beta0, "betaX": scenario.betaX}
    tables, counts = {}, {}
    if not ok:
        return tables, counts
    for name in ("alpha0", "alphaX", "betaM", "beta0", "betaX"):
        if name in truths:
            est = np.array([r.curves[name][0] for r in ok])
            se = np.array([r.curves[name][1] for r in ok])
            truth = truths[name][None, :]
        else:
            est = np.array([r.scalars[name][0] for r in ok])[:, None]
            se = np.array([r.scalars[name][1] for r in ok])[:, None]
            truth = np.array([[scalar_truth[name]]])
        err = est - truth
        covered = np.abs(err) <= z * se
        mse = float(np.mean(err**2))
        meas = {"Bias": float(np.mean(err)), "Mean squared error": mse,
                "Root mean squared error": math.sqrt(mse),
                "Mean estimated SE": float(np.mean(se))}
        if name in truths:
            meas["Pointwise coverage"] = float(np.mean(covered))
            meas["Familywise coverage"] = float(np.mean(np.all(covered, axis=1)))
            counts[name] = {"familywise_covered": int(np.sum(np.all(covered, axis=1)))}
        else:
            meas["Coverage"] = float(np.mean(covered))
            counts[name] = {"covered": int(np.sum(covered))}
        tables[name] = meas

    truth_ie = true_indirect_effect(scenario)
    ie = np.array([r.indirect for r in ok])
    err = ie - truth_ie
    mse = float(np.mean(err**2))
    meas = {"Bias": float(np.mean(err)), "Mean squared error": mse,
            "Root mean squared error": math.sqrt(mse)}
    counts["indirect"] = {}
    if nboot > 0:
        meas["Mean estimated SE"] = float(np.mean([r.boot_sd for r in ok]))
        for m in CI_METHODS:
            lo = np.array([r.cis[m][0] for r in ok])
            hi = np.array([r.cis[m][1] for r in ok])
            cov = int(np.sum((lo <= truth_ie) & (truth_ie <= hi)))
            pw = int(np.sum((lo > 0) | (hi < 0)))
            meas[f"{m.capitalize()} coverage"] = cov / len(ok)
            meas[f"{m.capitalize()} power"] = pw / len(ok)
            counts["indirect"][f"{m}_covered"] = cov
            counts["indirect"][f"{m}_rejected"] = pw
    tables["indirect"] = meas
    return tables, counts


def run_simulation_study(scenario: Scenario, n_datasets: int, nboot: int = 199,
                         config=None, master_seed: int | None = None, n_jobs: int = 1,
                         progress: Callable | None = None) -> StudyReport:
    """Generate, fit and (optionally) bootstrap ``n_datasets`` replications.

    ``nboot=0`` skips the bootstrap (stage-fit metrics only). Replication
    seeds are derived from ``master_seed`` (default ``scenario.seed``) by
    replication number, so the report does not depend on ``n_jobs``.
    """
    from .mediation import MediationConfig

    if n_datasets < 1:
        raise InputError("n_datasets must be >= 1")
    if nboot < 0:
        raise InputError("nboot must be >= 0")
    config = config or MediationConfig(outcome_link=scenario.outcome_link, nboot=max(nboot, 1),
                                       grid_size=scenario.grid_points)
    master = scenario.seed if master_seed is None else master_seed
    t0 = time.perf_counter()
    jobs = [(scenario, rep, master, nboot, config) for rep in range(n_datasets)]
    results: list[ReplicationResult] = []
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            for r in ex.map(_run_one, jobs, chunksize=1):
                results.append(r)
                if progress:
                    progress(r)
    else:
        for j in jobs:
            r = _run_one(j)
            results.append(r)
            if progress:
                progress(r)
    results.sort(key=lambda r: r.rep)
    failures = [(r.rep, r.error) for r in results if not r.ok]
    for rep, err in failures:
        log.warning("replication %d failed: %s", rep, err)
    grid = np.linspace(scenario.times[0], scenario.times[-1], config.grid_size)
    tables, counts = _aggregate(scenario, results, nboot, config.ci_level, grid)
    n_ok = len(results) - len(failures)
    return StudyReport(scenario.n_subjects, n_datasets, n_ok, len(failures), nboot,
                       config.ci_level, true_indirect_effect(scenario), tables, counts,
                       scenario.describe(), time.perf_counter() - t0, failures)
