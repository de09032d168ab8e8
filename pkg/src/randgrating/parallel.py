"""Order-preserving parallel map over independent jobs."""

from __future__ import annotations

import os

from joblib import Parallel, delayed


def resolve_workers(workers):
    if workers is None or workers == 0:
        return 1
    if workers < 0:
        return max(1, (os.cpu_count() or 1) + 1 + workers)
    return int(workers)


def parallel_map(fn, jobs, workers=1, common=()):
    """``[fn(job, *common) for job in jobs]``, fanned out over processes when ``workers > 1``.

    Results come back in job order, so outputs never depend on the worker
    count as long as ``fn`` is pure.
    """
    jobs = list(jobs)
    n = resolve_workers(workers)
    if n == 1 or len(jobs) <= 1:
        return [fn(job, *common) for job in jobs]
    return Parallel(n_jobs=n, backend="loky")(delayed(fn)(job, *common) for job in jobs)
