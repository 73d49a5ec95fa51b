from __future__ import annotations

import threading
from datetime import datetime, timedelta, timezone

EPOCH = datetime(2025, 1, 1, tzinfo=timezone.utc)


class WallClock:
    def __call__(self) -> str:
        return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


class LogicalClock:
    """Deterministic timestamps: ``start`` plus one ``step`` per call."""

    def __init__(self, start: datetime = EPOCH, step: timedelta = timedelta(seconds=1)):
        self._next = start
        self._step = step
        self._lock = threading.Lock()

    def __call__(self) -> str:
        with self._lock:
            now = self._next
            self._next += self._step
        return now.isoformat(timespec="milliseconds")


def make_clock(kind: str, offset: int = 0):
    if kind == "wall":
        return WallClock()
    if kind == "logical":
        return LogicalClock(EPOCH + timedelta(hours=offset))
    raise ValueError(f"unknown clock kind {kind!r}")
