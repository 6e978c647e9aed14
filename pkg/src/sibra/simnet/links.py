"""Directed link models: serialization, propagation, and queueing discipline.

A link transmits one packet at a time at ``capacity`` kbps, then hands it to
``deliver`` after the propagation delay. Queue disciplines:

* :class:`FifoLink`  drop-tail FIFO
* :class:`HscfqLink` two-level self-clocked fair queueing (group, then sub-flow)
* :class:`PriorityLink` reserved traffic first (SCFQ by reserved rate), then a
  drop-tail best-effort FIFO
"""
from __future__ import annotations

import heapq
import itertools
from collections import deque
from dataclasses import dataclass, field

from sibra.simnet.engine import US_PER_MS


@dataclass
class Packet:
    size: int  # bytes
    payload: object = None
    group: object = None
    gweight: float = 1.0
    sub: object = None
    sweight: float = 1.0
    reserved: bool = False


class _Link:
    def __init__(self, sim, capacity_kbps: float, delay_ms: float, deliver):
        if not capacity_kbps > 0:
            raise ValueError("capacity must be positive")
        self.sim = sim
        self.capacity = capacity_kbps
        self.delay_us = int(round(delay_ms * US_PER_MS))
        self.deliver = deliver
        self.busy = False
        self.sent_bytes = 0
        self.dropped = 0

    def tx_us(self, size: int) -> int:
        # bits / kbps = ms
        return max(1, int(round(size * 8 * US_PER_MS / self.capacity)))

    def send(self, pkt: Packet) -> bool:
        if not self._enqueue(pkt):
            self.dropped += 1
            return False
        if not self.busy:
            self._start()
        return True

    def _start(self):
        pkt = self._dequeue()
        if pkt is None:
            self.busy = False
            return
        self.busy = True
        self.sim.after(self.tx_us(pkt.size), self._done, pkt)

    def _done(self, pkt):
        self.sent_bytes += pkt.size
        self.sim.after(self.delay_us, self.deliver, pkt)
        self._start()

    def _enqueue(self, pkt) -> bool:
        raise NotImplementedError

    def _dequeue(self):
        raise NotImplementedError


class FifoLink(_Link):
    def __init__(self, sim, capacity_kbps, delay_ms, deliver, buffer_pkts: int = 64):
        super().__init__(sim, capacity_kbps, delay_ms, deliver)
        self.buffer = buffer_pkts
        self.q = deque()

    def _enqueue(self, pkt):
        if len(self.q) >= self.buffer:
            return False
        self.q.append(pkt)
        return True

    def _dequeue(self):
        return self.q.popleft() if self.q else None


@dataclass
class _Group:
    weight: float
    subs: dict = field(default_factory=dict)  # sub -> deque[(tag, seq, pkt)]
    last: dict = field(default_factory=dict)  # sub -> last inner finish tag
    vtime: float = 0.0  # tag of the last inner packet served
    finish: float = 0.0  # last group-level finish tag
    queued: int = 0


class HscfqLink(_Link):
    """Fair queueing over groups, and over sub-flows inside each group.

    Each sub-flow has its own buffer of ``buffer_pkts`` packets, so a flooding
    sub-flow only loses its own packets.
    """

    def __init__(self, sim, capacity_kbps, delay_ms, deliver, buffer_pkts: int = 64):
        super().__init__(sim, capacity_kbps, delay_ms, deliver)
        self.buffer = buffer_pkts
        self.groups: dict = {}
        self.heap = []  # (group tag, seq, group key)
        self.v = 0.0
        self._seq = itertools.count()

    def _enqueue(self, pkt):
        g = self.groups.get(pkt.group)
        if g is None:
            g = self.groups[pkt.group] = _Group(pkt.gweight)
        q = g.subs.get(pkt.sub)
        if q is None:
            q = g.subs[pkt.sub] = deque()
        if len(q) >= self.buffer:
            return False
        tag = max(g.vtime, g.last.get(pkt.sub, 0.0)) + pkt.size / pkt.sweight
        g.last[pkt.sub] = tag
        q.append((tag, next(self._seq), pkt))
        g.queued += 1
        if g.queued == 1:
            g.finish = max(self.v, g.finish) + pkt.size / g.weight
            heapq.heappush(self.heap, (g.finish, next(self._seq), pkt.group))
        return True

    def _dequeue(self):
        if not self.heap:
            return None
        tag, _, key = heapq.heappop(self.heap)
        self.v = tag
        g = self.groups[key]
        sub = min((q[0][0], q[0][1], s) for s, q in g.subs.items() if q)[2]
        itag, _, pkt = g.subs[sub].popleft()
        g.vtime = itag
        g.queued -= 1
        if g.queued:
            head = min(q[0][2].size for q in g.subs.values() if q)
            g.finish = tag + head / g.weight
            heapq.heappush(self.heap, (g.finish, next(self._seq), key))
        return pkt


class PriorityLink(_Link):
    """Reserved packets are always served before best-effort ones.

    Reserved flows share by SCFQ with weight equal to their reserved rate.
    Best-effort packets go through a drop-tail FIFO of ``be_buffer`` packets.
    """

    def __init__(self, sim, capacity_kbps, delay_ms, deliver, be_buffer: int = 100):
        super().__init__(sim, capacity_kbps, delay_ms, deliver)
        self.res_heap = []
        self.res_last: dict = {}
        self.v = 0.0
        self.be = deque()
        self.be_buffer = be_buffer
        self._seq = itertools.count()

    def _enqueue(self, pkt):
        if pkt.reserved:
            tag = max(self.v, self.res_last.get(pkt.sub, 0.0)) + pkt.size / pkt.sweight
            self.res_last[pkt.sub] = tag
            heapq.heappush(self.res_heap, (tag, next(self._seq), pkt))
            return True
        if len(self.be) >= self.be_buffer:
            return False
        self.be.append(pkt)
        return True

    def _dequeue(self):
        if self.res_heap:
            tag, _, pkt = heapq.heappop(self.res_heap)
            self.v = tag
            return pkt
        return self.be.popleft() if self.be else None
