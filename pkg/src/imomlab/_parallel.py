import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "IMOMLAB_THREADS"


def thread_count(threads=None) -> int:
    if threads is None:
        env = os.environ.get(ENV_THREADS)
        threads = int(env) if env else (len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count())
    return max(1, int(threads or 1))


def run_chunked(fn, n_items: int, threads=None, min_chunk: int = 16) -> None:
    """Call ``fn(lo, hi)`` over contiguous chunks of ``range(n_items)``.

    ``fn`` must write disjoint output slices; results therefore do not depend
    on how many threads ran or in which order chunks finished.
    """
    threads = thread_count(threads)
    if threads == 1 or n_items <= min_chunk:
        fn(0, n_items)
        return
    n_chunks = min(n_items // min_chunk, threads * 4) or 1
    bounds = [n_items * i // n_chunks for i in range(n_chunks + 1)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for f in [pool.submit(fn, bounds[i], bounds[i + 1]) for i in range(n_chunks)]:
            f.result()
