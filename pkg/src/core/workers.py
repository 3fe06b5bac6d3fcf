"""
Bounded worker pool for independent fits, grid points and trials
"""

import contextvars
import os
from typing import Callable, Iterable, List, Optional, TypeVar
from joblib import Parallel, delayed

T = TypeVar("T")
R = TypeVar("R")


def resolve_jobs(jobs: Optional[int]) -> int:
    """Number of workers; None or non-positive means one per logical core"""
    if jobs is None or jobs <= 0:
        return os.cpu_count() or 1
    return int(jobs)


def run_parallel(func: Callable[[T], R], items: Iterable[T], n_jobs: Optional[int] = 1) -> List[R]:
    """Apply func to every item, returning results in input order.

    Each task runs in a copy of the caller's context, so the active run id follows it onto worker threads.
    """
    items = list(items)
    workers = min(resolve_jobs(n_jobs), max(len(items), 1))
    if workers == 1:
        return [func(item) for item in items]
    # one copy per task; a context cannot be entered by two threads at once
    tasks = [delayed(contextvars.copy_context().run)(func, item) for item in items]
    return Parallel(n_jobs=workers, prefer="threads")(tasks)
