"""Deterministic discrete-event loop with integer microsecond time."""
from __future__ import annotations

import heapq
import itertools
import random

US_PER_MS = 1000
US_PER_S = 1_000_000


class Simulator:
    def __init__(self, seed: int = 0):
        self.now = 0  # microseconds
        self.rng = random.Random(seed)
        self._queue = []
        self._seq = itertools.count()
        self.processed = 0
        self._stopped = False

    def stop(self) -> None:
        """End :meth:`run` after the current event."""
        self._stopped = True

    @property
    def now_ms(self) -> float:
        return self.now / US_PER_MS

    @property
    def now_s(self) -> float:
        return self.now / US_PER_S

    def at(self, t_us: int, fn, *args) -> None:
        if t_us < self.now:
            raise ValueError("cannot schedule in the past")
        heapq.heappush(self._queue, (int(t_us), next(self._seq), fn, args))

    def after(self, delay_us: float, fn, *args) -> None:
        self.at(self.now + int(round(delay_us)), fn, *args)

    def every(self, period_us: int, fn, start_us: int = 0, until_us=None) -> None:
        """Call ``fn()`` at start, start+period, ... (while before ``until_us``)."""
        def tick():
            fn()
            nxt = self.now + period_us
            if until_us is None or nxt < until_us:
                self.at(nxt, tick)
        self.at(start_us, tick)

    def run(self, until_us=None) -> None:
        q = self._queue
        self._stopped = False
        while q and not self._stopped:
            if until_us is not None and q[0][0] > until_us:
                break
            t, _, fn, args = heapq.heappop(q)
            self.now = t
            fn(*args)
            self.processed += 1
        if until_us is not None and not self._stopped:
            self.now = max(self.now, until_us)
