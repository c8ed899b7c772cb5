"""
Background sample preparation feeding a bounded queue.
"""
import queue
import threading
from typing import Any, Callable, Iterator, Optional

from utils.logger import logger

_DONE = object()


class Prefetcher:
    """
    Produce items ``make(0) .. make(count - 1)`` on one worker thread.

    Items come out in index order; an exception raised by ``make`` is re-raised
    in the consumer. ``make`` must derive its randomness from the index so the
    sequence does not depend on timing.
    """

    def __init__(self, make: Callable[[int], Any], count: int, depth: int = 4):
        self.make = make
        self.count = count
        self._queue: "queue.Queue" = queue.Queue(maxsize=max(depth, 1))
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def _put(self, entry) -> bool:
        """Timed put that gives up once the consumer has stopped."""
        while not self._stop.is_set():
            try:
                self._queue.put(entry, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _run(self) -> None:
        try:
            for index in range(self.count):
                if self._stop.is_set():
                    return
                if not self._put((index, self.make(index))):
                    return
        except Exception as e:  # handed to the consumer
            logger.error(f"Prefetch worker failed at item: {e}")
            self._put((None, e))
            return
        self._put((None, _DONE))

    def __iter__(self) -> Iterator[Any]:
        self._thread = threading.Thread(target=self._run, name="prefetch", daemon=True)
        self._thread.start()
        try:
            while True:
                index, item = self._queue.get()
                if item is _DONE:
                    return
                if index is None:
                    raise item
                yield item
        finally:
            self.stop()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None and self._thread.is_alive():
            # drain so a blocked put can see the stop flag
            while not self._queue.empty():
                try:
                    self._queue.get_nowait()
                except queue.Empty:
                    break
            self._thread.join(timeout=5)
