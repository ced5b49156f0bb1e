"""
Replica fan-out over worker threads.

Each task owns its state; results come back in submission order so that the
reduction is the same for any number of workers.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from coagkit_logging import logger
from coagkit_settings import settings

T = TypeVar("T")
R = TypeVar("R")


class ReplicaPool:
    def __init__(self, workers: Optional[int] = None):
        self.workers = workers if workers and workers > 0 else settings.worker_count()

    def __repr__(self):
        return f"ReplicaPool(workers={self.workers})"

    def map_ordered(self, task: Callable[[T], R], items: Iterable[T]) -> List[R]:
        items = list(items)
        if self.workers == 1 or len(items) <= 1:
            return [task(item) for item in items]
        logger.debug(f"Dispatching {len(items)} tasks on {self.workers} threads")
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            # Executor.map yields in submission order regardless of completion order
            return list(executor.map(task, items))
