from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

from core.config import get_settings
from core.errors import ConfigurationError

T = TypeVar("T")
R = TypeVar("R")


class SweepExecutor:
    """Thread pool for per-sample distortion and attack work.

    Every task is seeded from its item alone, so the worker count never
    changes a result.
    """

    def __init__(self, max_workers: int) -> None:
        if max_workers < 1:
            raise ConfigurationError(f"max_workers must be >= 1, got {max_workers}")
        self.max_workers = max_workers
        self._executor = ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix="sweep")

    def map_ordered(self, fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
        # submission order, whatever the completion order
        return list(self._executor.map(fn, items))

    def shutdown(self) -> None:
        self._executor.shutdown(wait=False, cancel_futures=True)


sweep_executor = SweepExecutor(max_workers=get_settings().sweep_workers)
