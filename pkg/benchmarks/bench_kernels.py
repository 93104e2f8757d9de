"""Compare the compiled kernels with the numpy fallback.

Times each kernel on problem sizes typical of a fit (records from the
default simulation, 24-column TVEM design) and, optionally, one full
``fit_funmediation`` call under each backend in a fresh interpreter.

    python benchmarks/bench_kernels.py [--repeat 5] [--n-subjects 1000] [--end-to-end]
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from funmed import _kernels_py
from funmed.splines import BasisSpec, knot_vector

try:
    from funmed import _kernels as _kc
except ImportError:
    _kc = None

END_TO_END = """
import time
from funmed import kernels
from funmed.mediation import MediationConfig, fit_funmediation
from funmed.simulate import Scenario, generate_dataset
data = generate_dataset(Scenario(n_subjects={n}, seed=1))
fit_funmediation(data, MediationConfig())
t0 = time.perf_counter()
for _ in range({repeat}):
    fit_funmediation(data, MediationConfig())
print(kernels.BACKEND, (time.perf_counter() - t0) / {repeat})
"""


def _problems(n_subjects: int, rng: np.random.Generator) -> dict:
    n = n_subjects * 40  # about 40 records per subject at 60% missingness
    kv = knot_vector(BasisSpec(3, 8), 0.0, 1.0)
    x = rng.uniform(0, 1, n)
    X = np.hstack([_kernels_py.bspline_design(kv, 3, x)] * 2)
    return {
        "bspline_design": ((kv, 3, x), {}),
        "cluster_gram": ((X, rng.uniform(0.5, 2, n), rng.normal(size=n),
                          np.repeat(np.arange(n_subjects), 40), n_subjects), {}),
        "cluster_score_sums": ((X, rng.normal(size=n), np.repeat(np.arange(n_subjects), 40),
                                n_subjects), {}),
    }


def _best(fn, args, repeat: int) -> float:
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n-subjects", type=int, default=1000)
    ap.add_argument("--end-to-end", action="store_true",
                    help="also time a complete mediation fit under each backend")
    args = ap.parse_args(argv)

    if _kc is None:
        print("compiled extension not built; only the fallback can be timed")
    problems = _problems(args.n_subjects, np.random.default_rng(0))
    print(f"{'kernel':<22s}{'python (ms)':>14s}{'cython (ms)':>14s}{'speedup':>10s}")
    for name, (a, _) in problems.items():
        py = _best(getattr(_kernels_py, name), a, args.repeat) * 1e3
        if _kc is None:
            print(f"{name:<22s}{py:>14.3f}{'-':>14s}{'-':>10s}")
            continue
        cy = _best(getattr(_kc, name), a, args.repeat) * 1e3
        print(f"{name:<22s}{py:>14.3f}{cy:>14.3f}{py / cy:>9.1f}x")

    if args.end_to_end:
        code = END_TO_END.format(n=args.n_subjects, repeat=max(1, args.repeat // 2))
        for flag in ("1", "0"):
            env = dict(os.environ, FUNMED_PURE_PYTHON=flag)
            out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                                 text=True, check=True).stdout.split()
            print(f"fit_funmediation ({out[0]}): {float(out[1]) * 1e3:.1f} ms")
    return 0


if __name__ == "__main__":
    sys.exit(main())
