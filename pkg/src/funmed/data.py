"""Long-format intensive longitudinal data joined to subject-level variables."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LongDataset:
    """Mediator records plus one row of subject-level data per subject.

    Subject arrays (``ids``, ``treatment``, ``covariates``, ``outcome``) are
    aligned; records reference subjects through ``record_subject`` (an index
    into ``ids``). Records are stored sorted by subject then time, so the
    container is insensitive to input record order. Subjects may have zero
    records.
    """

    ids: np.ndarray
    treatment: np.ndarray
    covariates: np.ndarray
    outcome: np.ndarray
    record_subject: np.ndarray
    times: np.ndarray
    mediator: np.ndarray
    t_min: float
    t_max: float
    covariate_names: tuple = field(default=())

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=object)
        n = ids.size
        if len(set(ids.tolist())) != n:
            raise InputError("subject ids must be unique")
        treat = np.asarray(self.treatment, dtype=np.float64).reshape(-1)
        out = np.asarray(self.outcome, dtype=np.float64).reshape(-1)
        cov = np.asarray(self.covariates, dtype=np.float64)
        if cov.ndim != 2 or cov.shape[0] != n:
            cov = np.zeros((n, 0)) if cov.size == 0 else cov.reshape(n, -1)
        if treat.size != n or out.size != n:
            raise InputError("treatment and outcome must have one value per subject")
        names = tuple(self.covariate_names) or tuple(f"C{j + 1}" for j in range(cov.shape[1]))
        if len(names) != cov.shape[1]:
            raise InputError("covariate_names does not match the covariate columns")
        rs = np.asarray(self.record_subject, dtype=np.int64).reshape(-1)
        tt = np.asarray(self.times, dtype=np.float64).reshape(-1)
        mm = np.asarray(self.mediator, dtype=np.float64).reshape(-1)
        if not (rs.size == tt.size == mm.size):
            raise InputError("record arrays must have equal length")
        if rs.size and (rs.min() < 0 or rs.max() >= n):
            raise InputError("record refers to an unknown subject")
        for name, arr in (("treatment", treat), ("outcome", out), ("covariates", cov),
                          ("times", tt), ("mediator", mm)):
            if not np.all(np.isfinite(arr)):
                raise InputError(f"{name} contain missing or non-finite values")
        t_min, t_max = float(self.t_min), float(self.t_max)
        if not t_min < t_max:
            raise InputError(f"degenerate time interval [{t_min}, {t_max}]")
        if tt.size and (tt.min() < t_min or tt.max() > t_max):
            raise InputError(f"record times outside [{t_min}, {t_max}]")
        order = np.lexsort((tt, rs))
        for name, arr in (("ids", ids), ("treatment", treat), ("covariates", cov),
                          ("outcome", out)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name, arr in (("record_subject", rs[order]), ("times", tt[order]),
                          ("mediator", mm[order])):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "t_min", t_min)
        object.__setattr__(self, "t_max", t_max)
        object.__setattr__(self, "covariate_names", names)

    @classmethod
    def from_records(cls, subject_ids, times, mediator, subjects: dict,
                     t_min: float | None = None, t_max: float | None = None,
                     covariate_names=()) -> "LongDataset":
        """Build from parallel record sequences and a ``{id: (x, covariates, y)}`` map.

        ``t_min``/``t_max`` default to the observed range of record times.
        """
        ids = list(subjects)
        pos = {sid: i for i, sid in enumerate(ids)}
        try:
            rs = np.array([pos[s] for s in subject_ids], dtype=np.int64)
        except KeyError as exc:
            raise InputError(f"record for subject {exc.args[0]!r} with no subject data") from None
        treat = [subjects[s][0] for s in ids]
        cov = [np.atleast_1d(np.asarray(subjects[s][1], dtype=np.float64)) for s in ids]
        out = [subjects[s][2] for s in ids]
        tt = np.asarray(times, dtype=np.float64)
        if t_min is None:
            t_min = float(tt.min()) if tt.size else 0.0
        if t_max is None:
            t_max = float(tt.max()) if tt.size else 1.0
        q = cov[0].size if cov else 0
        return cls(np.array(ids, dtype=object), np.array(treat), np.array(cov).reshape(len(ids), q),
                   np.array(out), rs, tt, mediator, t_min, t_max, covariate_names)

    @property
    def n_subjects(self) -> int:
        return self.ids.size

    @property
    def n_records(self) -> int:
        return self.times.size

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    def record_counts(self) -> np.ndarray:
        return np.bincount(self.record_subject, minlength=self.n_subjects)

    def record_slices(self) -> list[slice]:
        bounds = np.concatenate([[0], np.cumsum(self.record_counts())])
        return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]

    def subset(self, keep) -> "LongDataset":
        """Dataset restricted to subjects where boolean mask ``keep`` is true."""
        keep = np.asarray(keep, dtype=bool)
        new_index = np.cumsum(keep) - 1
        rec_keep = keep[self.record_subject]
        return LongDataset(self.ids[keep], self.treatment[keep], self.covariates[keep],
                           self.outcome[keep], new_index[self.record_subject[rec_keep]],
                           self.times[rec_keep], self.mediator[rec_keep], self.t_min,
                           self.t_max, self.covariate_names)

    def filter_min_obs(self, min_obs: int = 1) -> tuple["LongDataset", list]:
        """Drop subjects with fewer than ``min_obs`` records (and always those with none).

        Returns the filtered dataset and the list of dropped ids.
        """
        if min_obs < 0:
            raise InputError("min_obs must be >= 0")
        counts = self.record_counts()
        keep = counts >= max(min_obs, 1)
        dropped = self.ids[~keep].tolist()
        if dropped:
            log.info("dropped %d of %d subjects with fewer than %d records",
                     len(dropped), self.n_subjects, max(min_obs, 1))
        return self.subset(keep), dropped

    def resample(self, index) -> "LongDataset":
        """Subject-level resample; repeated subjects get suffixed ids ``id#k``."""
        index = np.asarray(index, dtype=np.int64)
        slices = self.record_slices()
        seen: dict = {}
        new_ids, rs, tt, mm = [], [], [], []
        for new_i, old_i in enumerate(index):
            k = seen.get(old_i, 0)
            seen[old_i] = k + 1
            new_ids.append(self.ids[old_i] if k == 0 else f"{self.ids[old_i]}#{k}")
            sl = slices[old_i]
            rs.append(np.full(sl.stop - sl.start, new_i))
            tt.append(self.times[sl])
            mm.append(self.mediator[sl])
        cat = (lambda parts, dt: np.concatenate(parts) if parts else np.zeros(0, dt))
        return LongDataset(np.array(new_ids, dtype=object), self.treatment[index],
                           self.covariates[index], self.outcome[index],
                           cat(rs, np.int64), cat(tt, float), cat(mm, float),
                           self.t_min, self.t_max, self.covariate_names)

    def equals(self, other: "LongDataset") -> bool:
        """Field-for-field equality (exact floats)."""
        if not isinstance(other, LongDataset):
            return False
        return (self.ids.tolist() == other.ids.tolist()
                and self.covariate_names == other.covariate_names
                and self.t_min == other.t_min and self.t_max == other.t_max
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("treatment", "covariates", "outcome", "record_subject",
                                  "times", "mediator")))

    __eq__ = equals
    __hash__ = None  # type: ignore[assignment]
