"""Cooperative deadlines for long-running analyses."""
from __future__ import annotations

import time


class AnalysisTimeout(RuntimeError):
    pass


class Deadline:
    """Wall-clock budget checked at safe points; ``None`` seconds means unlimited."""

    def __init__(self, seconds: float | None = None):
        self.seconds = seconds
        self.start = time.monotonic()

    @property
    def expired(self) -> bool:
        return self.seconds is not None and time.monotonic() - self.start >= self.seconds

    def check(self):
        if self.expired:
            raise AnalysisTimeout(f"time budget of {self.seconds} s exhausted")

    def remaining(self):
        if self.seconds is None:
            return None
        return max(0.0, self.seconds - (time.monotonic() - self.start))
