import os
from concurrent.futures import ThreadPoolExecutor


def resolve_jobs(jobs: int | None = None) -> int:
    if jobs is None:
        env = os.environ.get("PULSESHAPER_JOBS")
        jobs = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(jobs))


def parallel_map(fn, items, jobs: int | None = None) -> list:
    """Ordered map over threads.  Kernels release the GIL, and every task is
    independent, so the result does not depend on ``jobs``."""
    items = list(items)
    jobs = resolve_jobs(jobs)
    if jobs == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
