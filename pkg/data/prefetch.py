"""Background batch production with in-order delivery."""
import logging
import queue
import threading
from typing import Generic, Iterable, Iterator, Optional, Tuple, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")

_DONE = object()


class PrefetchLoader(Generic[T]):
    """
    Runs an iterable on one worker thread and hands its items over through a
    bounded queue. Items carry sequence numbers; the consumer checks them, so
    delivery order is exactly the order of a single-threaded loop. An
    exception raised by the worker is re-raised in the consumer.
    """

    def __init__(self, source: Iterable[T], depth: int = 2):
        if depth < 1:
            raise ValueError(f"prefetch depth must be >= 1, got {depth}")
        self.source = source
        self.depth = depth
        self._queue: "queue.Queue[Tuple[int, object]]" = queue.Queue(maxsize=depth)
        self._stop = threading.Event()
        self._lock = threading.Lock()
        self._thread: Optional[threading.Thread] = None
        self.produced = 0

    def _put(self, item) -> bool:
        while not self._stop.is_set():
            try:
                self._queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _work(self) -> None:
        seq = 0
        try:
            for item in self.source:
                if not self._put((seq, item)):
                    return
                with self._lock:
                    self.produced += 1
                seq += 1
            self._put((seq, _DONE))
        except BaseException as e:
            logger.error(f"[PREFETCH] worker failed at item {seq}: {e}")
            self._put((seq, e))

    def __iter__(self) -> Iterator[T]:
        self._thread = threading.Thread(target=self._work, name="prefetch", daemon=True)
        self._thread.start()
        expected = 0
        try:
            while True:
                seq, item = self._queue.get()
                if seq != expected:
                    raise RuntimeError(f"prefetch delivered item {seq}, expected {expected}")
                if item is _DONE:
                    return
                if isinstance(item, BaseException):
                    raise item
                expected += 1
                yield item
        finally:
            self.close()

    def close(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None
