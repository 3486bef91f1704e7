import os
from concurrent.futures import ProcessPoolExecutor


def resolve_jobs(jobs=None) -> int:
    if jobs is None:
        jobs = int(os.environ.get("HAWKES_LAB_JOBS", "1") or 1)
    if jobs <= 0:
        jobs = os.cpu_count() or 1
    return jobs


def pmap(fn, items, jobs=None):
    """Ordered map, optionally over a process pool."""
    items = list(items)
    jobs = resolve_jobs(jobs)
    if jobs == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))
