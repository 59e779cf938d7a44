"""Process-level execution mode (sequential vs. threaded kernels)."""

from __future__ import annotations

import contextlib

_sequential = False
_limiter = None


def set_sequential(flag: bool = True) -> None:
    """Force single-threaded BLAS and serial loops for bitwise reproducibility."""
    global _sequential, _limiter
    _sequential = bool(flag)
    if _sequential and _limiter is None:
        try:
            from threadpoolctl import threadpool_limits
        except ImportError:  # pragma: no cover - threadpoolctl ships with scipy stacks
            return
        _limiter = threadpool_limits(limits=1)
    elif not _sequential and _limiter is not None:
        _limiter.restore_original_limits()
        _limiter = None


def is_sequential() -> bool:
    return _sequential


@contextlib.contextmanager
def sequential():
    prev = _sequential
    set_sequential(True)
    try:
        yield
    finally:
        set_sequential(prev)


def map_maybe_parallel(fn, items, max_workers: int | None = None):
    """``map`` that fans out over a thread pool unless sequential mode is on."""
    items = list(items)
    if _sequential or len(items) < 2:
        return [fn(it) for it in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(fn, items))
