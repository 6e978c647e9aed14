import random

import pytest

from sibra.classes import BandwidthClass, Kind
from sibra.monitor import (ClassMonitor, DualUseDetector, Exceeded, NeighborMonitor, Ok,
                           RenewalFilters, Verdict, ViolationLedger, localize,
                           select_monitored_classes)

E = lambda i: BandwidthClass(Kind.EPHEMERAL, i)


def test_neighbor_budget():
    m = NeighborMonitor()
    m.set_reserved("n", 1000.0)  # kbps
    assert m.check_neighbor_budget("n") == Ok()
    m.observe("n", 1000 * 1000 // 8 * 4)  # exactly 1000 kbps over 4 s
    assert m.check_neighbor_budget("n") == Ok()
    m.rotate()
    m.observe("n", int(1100 * 1000 / 8 * 4))
    res = m.check_neighbor_budget("n")
    assert isinstance(res, Exceeded) and res.by == pytest.approx(100.0)


def test_select_classes():
    assert len(select_monitored_classes(random.Random(0), 20)) == 20
    assert select_monitored_classes(random.Random(0), 0) == frozenset()
    assert select_monitored_classes(random.Random(5), 4) == \
        select_monitored_classes(random.Random(5), 4)
    with pytest.raises(ValueError):
        select_monitored_classes(random.Random(0), 21)


def test_class_violation():
    led = ViolationLedger()
    cm = ClassMonitor(led, m=20)
    five_mbps = BandwidthClass(Kind.EPHEMERAL, 8)  # 4096 kbps, the closest below 5 Mbps
    assert cm.flag_class_violation(b"f", five_mbps.rate, five_mbps) is Verdict.OK
    assert cm.flag_class_violation(b"f", 100.0, five_mbps) is Verdict.OK
    assert cm.flag_class_violation(b"f", 8000.0, five_mbps) is Verdict.BLACKLISTED
    assert led.is_blacklisted(b"f", 0) and led.is_blacklisted(b"f", 16)
    assert not led.is_blacklisted(b"f", 17)


def test_class_monitor_counts_only_monitored():
    led = ViolationLedger()
    cm = ClassMonitor(led, m=1)
    mon = cm.start_interval(random.Random(1))
    (c,) = mon
    other = E((c.index + 1) % 20)
    cm.observe(b"a", c, int(c.rate * 2 * 1000 / 8 * 4))
    cm.observe(b"b", other, int(other.rate * 2 * 1000 / 8 * 4))
    assert cm.end_interval(0) == [b"a"]


def test_renewal_filters():
    rf = RenewalFilters()
    rf.record_renewal_observation(b"f" * 16, 3, E(5), 10)
    assert rf.contains(b"f" * 16, 3, E(5))
    assert not rf.contains(b"f" * 16, 4, E(5))
    rng = random.Random(0)
    for t in range(7, 11):
        rf.record_renewal_observation(b"x" * 16, 1, E(5), t)
    assert rf.live(E(5)) == 4
    assert rf.rotate(9) == 3
    assert rf.contains(b"f" * 16, 3, E(5))
    rf.rotate(10)
    assert not rf.contains(b"f" * 16, 3, E(5))


def test_filter_fp_rate_at_capacity():
    rf = RenewalFilters(capacity=2000)
    rng = random.Random(4)
    for _ in range(2000):
        rf.record_renewal_observation(rng.getrandbits(128).to_bytes(16, "big"), 0, E(3), 5)
    hits = sum(rf.contains(rng.getrandbits(128).to_bytes(16, "big"), 0, E(3)) for _ in range(20000))
    assert hits / 20000 < 0.015


def test_i_zero_self_reuse():
    d = DualUseDetector()

    class Zero(random.Random):
        def randrange(self, *a):
            return 0

    f = b"q" * 16
    d.observe_packet(f, 6, E(5), 10, 8, Zero())
    assert d.observe_packet(f, 6, E(6), 10, 8, Zero()) is Verdict.SUSPICIOUS


def test_honest_renewal_sequence_is_clean():
    # an honest flow renewing every tick, cycling through all 16 indices
    d = DualUseDetector()
    rng = random.Random(9)
    f = b"h" * 16
    for tick in range(40):
        d.filters.rotate(tick)
        for _ in range(50):
            assert d.observe_packet(f, tick % 16, E(5), tick + 4, tick, rng) is Verdict.CLEAN
    assert d.ledger.counters[f] == 0


def test_dual_use_detected():
    d = DualUseDetector()
    rng = random.Random(2)
    f = b"m" * 16
    for n in range(2000):
        # alternate old (index 3) and new (index 4) reservations in comparable classes
        if n % 2:
            d.observe_packet(f, 3, E(5), 12, 9, rng)
        else:
            d.observe_packet(f, 4, E(6), 13, 9, rng)
        if d.ledger.is_blacklisted(f, 9):
            break
    assert d.ledger.is_blacklisted(f, 9)


def test_pushback_chain():
    path = [1, 2, 3]
    res = localize(path, b"f", 3, misbehaves_at=lambda a: True)
    assert res.located_at == 1 and res.rounds <= 2
    # compliant flow: the watcher sees nothing and the chain stops
    res = localize(path, b"f", 3, misbehaves_at=lambda a: False)
    assert res.located_at is None and res.rounds == 1
    # non-cooperating neighbor gets marked
    res = localize([1, 2, 3, 4], b"f", 4, misbehaves_at=lambda a: True,
                   cooperative=lambda a: a != 2)
    assert res.malicious == 2
    # detection at the origin terminates immediately
    assert localize(path, b"f", 1, lambda a: True).rounds == 0
