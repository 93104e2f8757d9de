"""``funmed`` command line: ``fit``, ``simulate`` and ``study`` subcommands.

Every option can also be set through an environment variable named
``FUNMED_<OPTION>`` (dashes become underscores, e.g. ``FUNMED_NBOOT=199``);
an explicit flag wins over the environment. Exit status is 0 on success,
2 for input errors and 3 for convergence failures; failures also print a
JSON error record on stderr (and to ``error.json`` in the output directory
when one was given).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .errors import ConvergenceError, FunmedError, InputError
from .glm import LinkFunction
from .io import (append_curve_rows, read_long_csv, write_curve_csv, write_json,
                 write_long_csv)
from .mediation import MediationConfig, bootstrap_mediation, fit_funmediation
from .simulate import Scenario, generate_dataset, run_simulation_study, zero_function
from .tvem import normal_multiplier

log = logging.getLogger("funmed")

ENV_PREFIX = "FUNMED_"
EXIT_OK, EXIT_INPUT, EXIT_CONVERGENCE, EXIT_INTERNAL = 0, 2, 3, 1


def _bool_env(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _apply_env(parser: argparse.ArgumentParser, environ) -> None:
    """Replace option defaults with ``FUNMED_*`` environment values."""
    for action in parser._actions:
        if not action.option_strings or action.dest in ("help", "version"):
            continue
        key = ENV_PREFIX + action.dest.upper()
        if key not in environ:
            continue
        raw = environ[key]
        try:
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                value = _bool_env(raw)
            elif isinstance(action, argparse._CountAction):
                value = int(raw)
            elif isinstance(action, argparse._AppendAction):
                conv = action.type or str
                value = [conv(v.strip()) for v in raw.split(",") if v.strip()]
            else:
                value = (action.type or str)(raw)
                if action.choices is not None and value not in action.choices:
                    raise ValueError(f"choose from {sorted(action.choices)}")
        except (TypeError, ValueError) as exc:
            raise InputError(f"environment variable {key}={raw!r}: {exc}") from None
        action.default = value


def _probability(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _pos_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def _add_scenario_args(p: argparse.ArgumentParser, many_sizes: bool = False) -> None:
    g = p.add_argument_group("scenario")
    if many_sizes:
        g.add_argument("--n-subjects", type=_pos_int, action="append", default=None,
                       help="sample size (repeat for several; default 500)")
    else:
        g.add_argument("--n-subjects", type=_pos_int, default=500)
    g.add_argument("--missing-rate", type=float, default=0.6,
                   help="probability that a grid observation is deleted")
    g.add_argument("--mediator-noise-sd", type=float, default=2.0)
    g.add_argument("--ar1-corr", type=float, default=0.8)
    g.add_argument("--beta0", type=float, default=0.0)
    g.add_argument("--beta-x", type=float, default=0.2)
    g.add_argument("--null-mediator", action="store_true",
                   help="set the mediator effect function to zero (no indirect effect)")
    g.add_argument("--outcome-link", choices=[v.value for v in LinkFunction], default="logit")
    g.add_argument("--seed", type=_nonneg_int, default=0)


def _scenario(args, n_subjects: int) -> Scenario:
    kw = dict(n_subjects=n_subjects, missing_rate=args.missing_rate,
              mediator_noise_sd=args.mediator_noise_sd, ar1_corr=args.ar1_corr,
              beta0=args.beta0, betaX=args.beta_x, outcome_link=args.outcome_link,
              seed=args.seed)
    if args.null_mediator:
        kw["betaM"] = zero_function
    return Scenario(**kw)


def build_parser(environ=None) -> argparse.ArgumentParser:
    environ = os.environ if environ is None else environ
    parser = argparse.ArgumentParser(
        prog="funmed", description="Functional mediation analysis for intensive longitudinal data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="analyze a long-format CSV dataset")
    fit.add_argument("--input", required=False, help="long-format CSV, one row per record")
    cols = fit.add_argument_group("columns")
    cols.add_argument("--id", default="id", help="subject id column")
    cols.add_argument("--time", default="time")
    cols.add_argument("--mediator", default="mediator")
    cols.add_argument("--treatment", default="treatment", help="0/1 treatment column")
    cols.add_argument("--outcome", default="outcome")
    cols.add_argument("--covariate", action="append", default=[],
                      help="subject-level covariate column (repeatable)")
    fit.add_argument("--binary-outcome", action="store_true",
                     help="logistic outcome model (default: Gaussian)")
    fit.add_argument("--outcome-link", choices=[v.value for v in LinkFunction], default=None,
                     help="outcome link; overrides --binary-outcome")
    fit.add_argument("--mediator-link", choices=[v.value for v in LinkFunction],
                     default="identity")
    fit.add_argument("--interpolate", choices=["linear", "spline"], default="linear",
                     help="presmoothing of the mediator trajectories")
    fit.add_argument("--nboot", type=_nonneg_int, default=500,
                     help="bootstrap replicates (0 skips the bootstrap)")
    fit.add_argument("--seed", type=_nonneg_int, default=0)
    fit.add_argument("--min-obs", type=_nonneg_int, default=1,
                     help="drop subjects with fewer mediator records")
    fit.add_argument("--grid-size", type=_pos_int, default=100)
    fit.add_argument("--ci-level", type=_probability, default=0.95)
    fit.add_argument("--t-min", type=float, default=None,
                     help="start of the time interval (default: earliest record)")
    fit.add_argument("--t-max", type=float, default=None,
                     help="end of the time interval (default: latest record)")
    fit.add_argument("--jobs", type=_pos_int, default=1, help="bootstrap worker processes")
    fit.add_argument("--out-dir", default=".")

    sim = sub.add_parser("simulate", help="write a synthetic dataset as long-format CSV")
    _add_scenario_args(sim)
    sim.add_argument("--output", default="-", help="CSV path ('-' for stdout)")

    study = sub.add_parser("study", help="run the Monte Carlo performance study")
    _add_scenario_args(study, many_sizes=True)
    study.add_argument("--n-datasets", type=_pos_int, default=200)
    study.add_argument("--nboot", type=_nonneg_int, default=199,
                       help="bootstrap replicates per dataset (0: stage metrics only)")
    study.add_argument("--ci-level", type=_probability, default=0.95)
    study.add_argument("--jobs", type=_pos_int, default=1, help="worker processes")
    study.add_argument("--out-dir", default=".")

    for p in (parser, fit, sim, study):
        _apply_env(p, environ)
    return parser


# -- fit ----------------------------------------------------------------------

def _outcome_link(args) -> LinkFunction:
    if args.outcome_link:
        return LinkFunction.parse(args.outcome_link)
    return LinkFunction.LOGIT if args.binary_outcome else LinkFunction.IDENTITY


def _ci(pair) -> dict:
    return {"lower": pair[0], "upper": pair[1]}


def _curve_rows(curve, level):
    lo, hi = curve.band(level)
    return curve.t, curve.estimate, curve.se, lo, hi


def cmd_fit(args) -> int:
    if not args.input:
        raise InputError("--input is required")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = read_long_csv(args.input, args.id, args.time, args.mediator, args.treatment,
                         args.outcome, args.covariate, args.t_min, args.t_max)
    config = MediationConfig(
        mediator_link=args.mediator_link, outcome_link=_outcome_link(args),
        grid_size=args.grid_size, min_obs=args.min_obs, nboot=max(args.nboot, 1),
        seed=args.seed, ci_level=args.ci_level, presmooth=args.interpolate,
        n_jobs=args.jobs)
    res = fit_funmediation(data, config)
    boot = None
    if args.nboot > 0:
        boot = bootstrap_mediation(data, config, res, n_jobs=args.jobs)

    tv, fr, level = res.tvem_fit, res.funreg_fit, args.ci_level
    tpath = out / "tvem_curves.csv"
    items = list(tv.curves.items())
    write_curve_csv(tpath, *_curve_rows(items[0][1], level), term=items[0][0])
    for name, curve in items[1:]:
        append_curve_rows(tpath, name, *_curve_rows(curve, level))
    write_curve_csv(out / "funreg_curve.csv", *_curve_rows(fr.betaM, level))
    with (out / "bootstrap_replicates.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "indirect_effect"])
        if boot is not None:
            for i, v in enumerate(boot.all_replicates):
                w.writerow([i + 1, repr(float(v)) if np.isfinite(v) else ""])

    z = normal_multiplier(level)
    te, (de, de_se) = res.total_effect, res.direct_effect
    indirect = {"estimate": res.indirect_effect, "bootstrap": None}
    if boot is not None:
        indirect["bootstrap"] = {
            "nboot": boot.nboot, "n_failed": boot.n_failed, "sd": boot.sd,
            "ci_percentile": _ci(boot.ci_percentile), "ci_basic": _ci(boot.ci_basic),
            "ci_normal": _ci(boot.ci_normal), "p_value": boot.p_value,
            "significant": bool(boot.ci_percentile[0] > 0 or boot.ci_percentile[1] < 0),
        }
    config_d = config.to_dict()
    config_d.pop("n_jobs")
    config_d["nboot"] = args.nboot
    payload = {
        "software": {"name": "funmed", "version": __version__},
        "provenance": {
            "seed": args.seed,
            "input": str(args.input),
            "columns": {"id": args.id, "time": args.time, "mediator": args.mediator,
                        "treatment": args.treatment, "outcome": args.outcome,
                        "covariates": list(args.covariate)},
            "config": config_d,
        },
        "subjects": {"total": data.n_subjects, "retained": res.n_subjects,
                     "dropped": res.n_dropped, "dropped_ids": [str(i) for i in res.dropped_ids]},
        "records": data.n_records,
        "t_min": res.t_min, "t_max": res.t_max, "ci_level": level,
        "total_effect": {"estimate": te.estimate, "se": te.se, "z": te.z,
                         "p_value": te.p_value,
                         "ci": _ci((te.estimate - z * te.se, te.estimate + z * te.se))},
        "direct_effect": {"estimate": de, "se": de_se,
                          "ci": _ci((de - z * de_se, de + z * de_se))},
        "indirect_effect": indirect,
        "decomposition_gap": res.decomposition_gap,
        "outcome_model": {"intercept": {"estimate": fr.beta0[0], "se": fr.beta0[1]},
                          "covariates": {k: {"estimate": v[0], "se": v[1]}
                                         for k, v in fr.betaC.items()}},
        "smoothing": {"tvem_lambda": tv.chosen_lambda, "funreg_lambda": fr.chosen_lambda,
                      "tvem_edf": tv.glm.effective_df, "funreg_edf": fr.glm.effective_df},
        "convergence": {"tvem": tv.glm.converged, "funreg": fr.glm.converged,
                        "total_effect": te.converged,
                        "warnings": list(tv.glm.warnings) + list(fr.glm.warnings)},
    }
    write_json(out / "result.json", payload)
    msg = f"indirect effect {res.indirect_effect:.4f}"
    if boot is not None:
        msg += (f" (percentile CI {boot.ci_percentile[0]:.4f}, {boot.ci_percentile[1]:.4f};"
                f" p = {boot.p_value:.4f})")
    log.info("%s; results in %s", msg, out)
    return EXIT_OK


# -- simulate / study -----------------------------------------------------------

def cmd_simulate(args) -> int:
    data = generate_dataset(_scenario(args, args.n_subjects))
    if args.output == "-":
        write_long_csv(data, sys.stdout)
    else:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        write_long_csv(data, args.output)
        log.info("wrote %d records for %d subjects to %s", data.n_records, data.n_subjects,
                 args.output)
    return EXIT_OK


def cmd_study(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sizes = args.n_subjects or [500]
    reports = []
    for n in sizes:
        sc = _scenario(args, n)
        config = MediationConfig(outcome_link=sc.outcome_link, nboot=max(args.nboot, 1),
                                 ci_level=args.ci_level, grid_size=sc.grid_points)
        rep = run_simulation_study(sc, args.n_datasets, args.nboot, config=config,
                                   n_jobs=args.jobs)
        log.info("N=%d: %d/%d replications in %.1f s", n, rep.n_successful, rep.n_datasets,
                 rep.seconds)
        reports.append(rep)
    cols = ["quantity", "n_subjects", "n_successful"] + reports[0].columns()
    with (out / "study_report.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, cols, lineterminator="\n")
        w.writeheader()
        for rep in reports:
            for row in rep.rows():
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    dicts = []
    for rep in reports:
        d = rep.to_dict()
        d.pop("seconds")
        dicts.append(d)
    write_json(out / "study_report.json",
               {"software": {"name": "funmed", "version": __version__},
                "provenance": {"seed": args.seed, "n_datasets": args.n_datasets,
                               "nboot": args.nboot, "ci_level": args.ci_level},
                "reports": dicts})
    text = "\n\n".join(rep.render() for rep in reports)
    (out / "study_tables.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "study": cmd_study}


def _error_record(exc: BaseException, code: int) -> dict:
    return {"error": type(exc).__name__, "message": str(exc), "exit_code": code}


def main(argv=None, environ=None) -> int:
    try:
        parser = build_parser(environ)
    except InputError as exc:
        sys.stderr.write(json.dumps(_error_record(exc, EXIT_INPUT)) + "\n")
        return EXIT_INPUT
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    log.debug("kernel backend: %s", kernels.BACKEND)
    try:
        return COMMANDS[args.command](args)
    except FunmedError as exc:
        code = EXIT_CONVERGENCE if isinstance(exc, ConvergenceError) else EXIT_INPUT
        record = _error_record(exc, code)
        sys.stderr.write(json.dumps(record) + "\n")
        out_dir = getattr(args, "out_dir", None)
        if out_dir:
            try:
                Path(out_dir).mkdir(parents=True, exist_ok=True)
                write_json(Path(out_dir) / "error.json", record)
            except OSError:
                pass
        return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
