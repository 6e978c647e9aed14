"""Policing: neighbor aggregates, sampled per-class flow monitoring, renewal
dual-use detection with Bloom filters, and pushback toward the offender."""
from __future__ import annotations

import enum
import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional

from sibra.bloom import BloomFilter
from sibra.classes import (EPHEMERAL_CLASSES, SIBRA_SECOND, BandwidthClass, Kind,
                           comparable_classes)

INTERVAL_S = SIBRA_SECOND


@dataclass(frozen=True)
class Ok:
    pass


@dataclass(frozen=True)
class Exceeded:
    by: float  # kbps


class Verdict(enum.Enum):
    OK = "ok"
    BLACKLISTED = "blacklisted"
    CLEAN = "clean"
    SUSPICIOUS = "suspicious"


class NeighborMonitor:
    """Byte counters per neighbor over one SIBRA second, compared to reservations."""

    def __init__(self, interval_s: float = INTERVAL_S):
        self.interval_s = interval_s
        self.bytes = defaultdict(int)
        self.reserved = defaultdict(float)  # kbps

    def set_reserved(self, neighbor, kbps: float) -> None:
        self.reserved[neighbor] = kbps

    def observe(self, neighbor, nbytes: int) -> None:
        self.bytes[neighbor] += nbytes

    def usage_kbps(self, neighbor) -> float:
        return self.bytes[neighbor] * 8 / 1000.0 / self.interval_s

    def check_neighbor_budget(self, neighbor):
        over = self.usage_kbps(neighbor) - self.reserved[neighbor]
        return Exceeded(over) if over > 1e-9 * max(1.0, self.reserved[neighbor]) else Ok()

    def rotate(self) -> None:
        self.bytes.clear()


class ViolationLedger:
    """Violation counters per offender (flow or source AS) and blacklist state.

    An offender is blacklisted as soon as its counter exceeds ``threshold``;
    the blacklist lasts ``duration`` SIBRA seconds.
    """

    def __init__(self, threshold: int = 8, duration: int = 16):
        self.threshold = threshold
        self.duration = duration
        self.counters = defaultdict(int)
        self.until: dict = {}

    def bump(self, who, now_tick: int, by: int = 1) -> bool:
        self.counters[who] += by
        if self.counters[who] > self.threshold:
            self.blacklist(who, now_tick)
            return True
        return False

    def blacklist(self, who, now_tick: int) -> None:
        self.until[who] = now_tick + self.duration

    def is_blacklisted(self, who, now_tick: int) -> bool:
        t = self.until.get(who)
        return t is not None and now_tick <= t


def select_monitored_classes(rng: random.Random, m: int) -> frozenset:
    """Uniform sample of ``m`` ephemeral classes without replacement."""
    if not 0 <= m <= EPHEMERAL_CLASSES:
        raise ValueError(f"m must be in 0..{EPHEMERAL_CLASSES}")
    picked = rng.sample(range(EPHEMERAL_CLASSES), m)
    return frozenset(BandwidthClass(Kind.EPHEMERAL, i) for i in picked)


class ClassMonitor:
    """Per-flow counters, kept only for flows in the currently monitored classes."""

    def __init__(self, ledger: ViolationLedger, m: int = 4, tol: float = 0.05,
                 interval_s: float = INTERVAL_S):
        self.ledger = ledger
        self.m = m
        self.tol = tol
        self.interval_s = interval_s
        self.monitored: frozenset = frozenset()
        self.bytes = defaultdict(int)
        self.classes: dict = {}

    def start_interval(self, rng: random.Random) -> frozenset:
        self.monitored = select_monitored_classes(rng, self.m)
        self.bytes.clear()
        self.classes.clear()
        return self.monitored

    def observe(self, flow: bytes, bw_class: BandwidthClass, nbytes: int) -> None:
        # the class comes from the authenticated header, so it cannot be faked
        if bw_class in self.monitored:
            self.bytes[flow] += nbytes
            self.classes[flow] = bw_class

    def flag_class_violation(self, flow: bytes, avg_kbps: float, bw_class: BandwidthClass,
                             now_tick: int = 0) -> Verdict:
        if avg_kbps > bw_class.rate * (1 + self.tol):
            self.ledger.blacklist(flow, now_tick)
            return Verdict.BLACKLISTED
        return Verdict.OK

    def end_interval(self, now_tick: int) -> list:
        """Evaluate all counted flows; returns the newly blacklisted ones."""
        bad = []
        for flow, n in self.bytes.items():
            rate = n * 8 / 1000.0 / self.interval_s
            if self.flag_class_violation(flow, rate, self.classes[flow], now_tick) \
                    is Verdict.BLACKLISTED:
                bad.append(flow)
        self.bytes.clear()
        return bad


class RenewalFilters:
    """Bloom filters of (flow id, reservation index), one per (expiration tick, class).

    Ephemeral reservations live at most 4 SIBRA seconds, so at most 4
    expiration ticks are live per class once expired ticks are rotated out.
    """

    def __init__(self, capacity: int = 10_000, fp_rate: float = 0.01):
        self.capacity = capacity
        self.fp_rate = fp_rate
        self.filters: dict = {}

    @staticmethod
    def _item(flow: bytes, index: int) -> bytes:
        return flow + bytes([index & 0x0F])

    def record_renewal_observation(self, flow: bytes, index: int, bw_class: BandwidthClass,
                                   exp_tick: int) -> None:
        f = self.filters.get((exp_tick, bw_class))
        if f is None:
            f = self.filters[(exp_tick, bw_class)] = BloomFilter(self.capacity, self.fp_rate)
        f.add(self._item(flow, index))

    def contains(self, flow: bytes, index: int, bw_class: BandwidthClass,
                 exp_tick: Optional[int] = None) -> bool:
        item = self._item(flow, index)
        for (t, c), f in self.filters.items():
            if c == bw_class and (exp_tick is None or t == exp_tick) and item in f:
                return True
        return False

    def rotate(self, now_tick: int) -> int:
        """Drop filters whose expiration instant has passed."""
        dead = [k for k in self.filters if k[0] <= now_tick]
        for k in dead:
            del self.filters[k]
        return len(dead)

    def live(self, bw_class: BandwidthClass) -> int:
        return sum(1 for (_, c) in self.filters if c == bw_class)

    def probe(self, flow: bytes, index: int, bw_class: BandwidthClass, exp_tick: int,
              i: int) -> bool:
        """One dual-use probe with offset ``i``.

        ``i == 0`` looks for the same index in the other comparable classes
        (one index used under two classes). ``i >= 1`` looks for a later index
        in comparable classes whose reservations expire strictly after this
        packet's, i.e. a newer renewal that is used alongside the old one.
        """
        target = self._item(flow, (index + i) % 16)
        near = comparable_classes(bw_class)
        for (t, c), f in self.filters.items():
            if c not in near:
                continue
            if i == 0:
                if c == bw_class:
                    continue
            elif t <= exp_tick:
                continue
            if target in f:
                return True
        return False


class DualUseDetector:
    def __init__(self, ledger: Optional[ViolationLedger] = None,
                 filters: Optional[RenewalFilters] = None):
        self.ledger = ledger or ViolationLedger()
        self.filters = filters or RenewalFilters()

    def observe_packet(self, flow: bytes, index: int, bw_class: BandwidthClass,
                       exp_tick: int, now_tick: int, rng: random.Random) -> Verdict:
        """Probe, then record the packet's own tuple."""
        v = self.detect_dual_use(flow, index, bw_class, exp_tick, now_tick, rng)
        self.filters.record_renewal_observation(flow, index, bw_class, exp_tick)
        return v

    def detect_dual_use(self, flow: bytes, index: int, bw_class: BandwidthClass,
                        exp_tick: int, now_tick: int, rng: random.Random) -> Verdict:
        i = rng.randrange(16)
        if self.filters.probe(flow, index, bw_class, exp_tick, i):
            self.ledger.bump(flow, now_tick)
            return Verdict.SUSPICIOUS
        return Verdict.CLEAN


# -- pushback -----------------------------------------------------------------


@dataclass(frozen=True)
class Notification:
    flow: bytes
    sender: int
    receiver: int


@dataclass
class PushbackAgent:
    as_id: int
    watch: set = field(default_factory=set)
    malicious_neighbors: set = field(default_factory=set)

    def pushback(self, flow: bytes, prev_as: int) -> Notification:
        return Notification(flow, self.as_id, prev_as)

    def receive(self, note: Notification) -> None:
        self.watch.add(note.flow)


@dataclass
class Localization:
    located_at: Optional[int]
    rounds: int
    malicious: Optional[int] = None
    trail: list = field(default_factory=list)


def localize(path: list, flow: bytes, detector: int,
             misbehaves_at: Callable[[int], bool],
             cooperative: Callable[[int], bool] = lambda _as: True,
             agents: Optional[dict] = None) -> Localization:
    """Walk pushback notifications from ``detector`` back toward the source.

    ``path`` lists AS ids source first. ``misbehaves_at(as_id)`` says whether
    the watched flow is still seen violating its class when it enters that
    AS. A watching AS that observes compliance stops the chain. A neighbor
    that ignores the notification while the flow is still misbehaving is
    marked malicious by the notifier.
    """
    agents = agents if agents is not None else {a: PushbackAgent(a) for a in path}
    pos = path.index(detector)
    res = Localization(None, 0)
    while pos > 0:
        cur, prev = path[pos], path[pos - 1]
        note = agents[cur].pushback(flow, prev)
        res.rounds += 1
        res.trail.append(note)
        if not cooperative(prev):
            agents[cur].malicious_neighbors.add(prev)
            res.malicious = prev
            res.located_at = prev
            return res
        agents[prev].receive(note)
        if not misbehaves_at(prev):
            res.located_at = None
            return res
        pos -= 1
    res.located_at = path[0]
    return res
