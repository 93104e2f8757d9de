"""Long-format CSV reading/writing and result serialization."""
from __future__ import annotations

import contextlib
import csv
import json
import math
from pathlib import Path

import numpy as np

from .data import LongDataset
from .errors import InputError


def _num(cell: str, row: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise InputError(f"row {row}, column {col!r}: cannot parse {cell!r} as a number") from None
    if not math.isfinite(v):
        raise InputError(f"row {row}, column {col!r}: non-finite value {cell!r}")
    return v


def read_long_csv(path, id_col: str = "id", time_col: str = "time",
                  mediator_col: str = "mediator", treatment_col: str = "treatment",
                  outcome_col: str = "outcome", covariate_cols=(), t_min: float | None = None,
                  t_max: float | None = None) -> LongDataset:
    """Parse a long-format CSV (one row per subject-time record).

    Subject-level columns are repeated on every row of a subject and must
    agree. A row with an empty mediator cell carries subject data only, which
    is how subjects without any mediator records are represented.
    """
    covariate_cols = list(covariate_cols or ())
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [id_col, time_col, mediator_col, treatment_col, outcome_col] + covariate_cols
        missing = [c for c in needed if c not in header]
        if missing:
            raise InputError(f"missing column(s) {missing} in {path}; found {header}")
        subjects: dict = {}
        rec_ids, times, meds = [], [], []
        for line, row in enumerate(reader, start=2):
            sid = (row[id_col] or "").strip()
            if not sid:
                raise InputError(f"row {line}, column {id_col!r}: empty subject id")
            x = _num(row[treatment_col], line, treatment_col)
            if x not in (0.0, 1.0):
                raise InputError(f"row {line}, column {treatment_col!r}: treatment must be 0 or 1")
            y = _num(row[outcome_col], line, outcome_col)
            cov = tuple(_num(row[c], line, c) for c in covariate_cols)
            prev = subjects.setdefault(sid, (x, cov, y))
            if prev != (x, cov, y):
                raise InputError(f"row {line}: subject {sid!r} has inconsistent subject-level values")
            mcell = (row[mediator_col] or "").strip()
            if mcell == "":
                continue
            rec_ids.append(sid)
            times.append(_num(row[time_col], line, time_col))
            meds.append(_num(mcell, line, mediator_col))
    if not subjects:
        raise InputError(f"{path} contains no data rows")
    if not times and (t_min is None or t_max is None):
        raise InputError(f"{path} contains no mediator records")
    return LongDataset.from_records(rec_ids, times, meds, subjects, t_min, t_max,
                                    covariate_names=tuple(covariate_cols))


def _fmt(v) -> str:
    return repr(float(v))


def write_long_csv(data: LongDataset, path, id_col: str = "id", time_col: str = "time",
                   mediator_col: str = "mediator", treatment_col: str = "treatment",
                   outcome_col: str = "outcome") -> None:
    """Write ``data`` in the layout :func:`read_long_csv` parses (lossless floats).

    ``path`` may also be an open text stream.
    """
    cov_names = list(data.covariate_names)
    slices = data.record_slices()
    if hasattr(path, "write"):
        ctx = contextlib.nullcontext(path)
    else:
        ctx = Path(path).open("w", newline="", encoding="utf-8")
    with ctx as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([id_col, time_col, mediator_col, treatment_col, outcome_col] + cov_names)
        for i, sl in enumerate(slices):
            subj = [_fmt(data.treatment[i]), _fmt(data.outcome[i])]
            subj += [_fmt(c) for c in data.covariates[i]]
            if sl.stop == sl.start:
                w.writerow([data.ids[i], "", ""] + subj)
                continue
            for t, m in zip(data.times[sl], data.mediator[sl]):
                w.writerow([data.ids[i], _fmt(t), _fmt(m)] + subj)


def write_curve_csv(path, t, estimate, se, lower, upper, term: str | None = None) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["t", "estimate", "se", "lower", "upper"]
        w.writerow(head if term is None else ["term"] + head)
        for row in zip(t, estimate, se, lower, upper):
            vals = [_fmt(v) for v in row]
            w.writerow(vals if term is None else [term] + vals)


def append_curve_rows(path, term: str, t, estimate, se, lower, upper) -> None:
    with Path(path).open("a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in zip(t, estimate, se, lower, upper):
            w.writerow([term] + [_fmt(v) for v in row])


def read_curve_csv(path) -> dict:
    """Read a curve CSV into ``{term: {column: array}}`` (term ``""`` if absent)."""
    out: dict = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            term = row.pop("term", "")
            d = out.setdefault(term, {})
            for k, v in row.items():
                d.setdefault(k, []).append(float(v))
    return {k: {c: np.array(v) for c, v in d.items()} for k, d in out.items()}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, payload: dict) -> None:
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=False, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")
