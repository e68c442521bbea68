import os
import logging
from concurrent import futures
from typing import Callable, Iterable, List, Optional, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def thread_cap(default: int = 1) -> int:
    """Worker cap from DFORGE_THREADS, falling back to default."""
    raw = os.environ.get("DFORGE_THREADS")
    if not raw:
        return max(1, default)
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning(f"Ignoring unparsable DFORGE_THREADS={raw!r}")
        return max(1, default)


def ordered_map(fn: Callable[[T], R], items: Iterable[T], max_workers: Optional[int] = None) -> List[R]:
    """Apply fn to every item, possibly concurrently; results keep input order."""
    items = list(items)
    workers = thread_cap() if max_workers is None else max(1, max_workers)
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with futures.ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))
