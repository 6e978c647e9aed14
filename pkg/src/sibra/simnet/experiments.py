"""The evaluation scenarios, run on real routers inside the event loop.

Every run is a pure function of (topology, scenario): all randomness comes
from the simulator's seeded generator.
"""
from __future__ import annotations

import math
import statistics
from collections import defaultdict
from typing import Optional

from sibra.classes import (EPHEMERAL_LIFETIME, SIBRA_SECOND, TICK_MS, BandwidthClass, Direction,
                           Kind, class_at_most, class_for_rate, is_expired, make_config,
                           new_flow_id, tick_of_ms)
from sibra.errors import ScenarioError, ShareDomainError
from sibra.fairshare import ShareInputs, eph_path_share, steady_dest_share, steady_local_share
from sibra.router import (Admitted, EventLog, Forwarded, RouterConfig, walk_confirm, walk_data,
                          walk_request)
from sibra.simnet.engine import US_PER_MS, US_PER_S, Simulator
from sibra.simnet.links import FifoLink, HscfqLink, Packet, PriorityLink
from sibra.simnet.metrics import Metrics
from sibra.simnet.scenario import Scenario
from sibra.simnet.topology import Topology, build_routers
from sibra.tokens import Flags, SibraHeader

TICK_US = TICK_MS * US_PER_MS


def _need_roles(topo: Topology, kind: str, *names):
    missing = [n for n in names if n not in topo.roles]
    if missing:
        raise ScenarioError(f"{kind} needs a topology with roles {missing} "
                            f"(topology '{topo.name}' has {sorted(topo.roles)})")


def _ramp(sim, rate_hz, start_us, until_us, fn):
    """Periodic sender with a random phase."""
    period = int(round(US_PER_S / rate_hz))
    first = start_us + sim.rng.randrange(period)
    if first < until_us:
        sim.every(period, fn, first, until_us)


# -- denial of capability ----------------------------------------------------------


def run_doc(topo: Topology, scn: Scenario, inter: bool, events: Optional[EventLog] = None) -> Metrics:
    """Request-channel flooding.

    Requests and replies (``request_bytes`` each) travel only in the steady
    partition of each link (``request_limit`` of capacity). Per hop the
    channel is shared by fair queueing: on up-path hops per up-path, on core
    hops per (source core, destination core) pair weighted by the core
    contract and then per up-path, on down-path hops per down-path and then
    per source weighted by its down-path share. ``params.scheduler: fifo``
    replaces this with a plain drop-tail queue.
    """
    isds = topo.isds()
    if inter and len(isds) < 2:
        raise ScenarioError("doc_inter needs a topology with at least two ISDs")
    if not topo.steady:
        raise ScenarioError("doc scenarios need steady paths")
    sim = Simulator(scn.seed)
    rng = sim.rng
    book = topo.contract_book()
    duration = float(scn.param("duration_s", 15.0))
    send_until = int((duration - scn.timeout_s) * US_PER_S)
    if send_until <= 0:
        raise ScenarioError("duration_s must exceed timeout_s")
    fifo = scn.param("scheduler", "hscfq") == "fifo"
    buffer_pkts = int(scn.param("buffer_pkts", 64))
    hosts = int(scn.param("hosts_per_attacker", 10))
    n_legit = int(scn.param("legit_sources", 2))
    size = int(scn.request_bytes)
    timeout_us = int(scn.timeout_s * US_PER_S)

    cores1 = topo.cores(isds[0])
    if inter:
        src_core, dst_core = cores1[0], topo.cores(isds[1])[0]
    else:
        if len(cores1) < 2:
            raise ScenarioError("doc_intra needs at least two cores in the first ISD")
        src_core, dst_core = cores1[0], cores1[1]
    under = defaultdict(list)
    for lf in sorted(topo.steady):
        under[topo.steady[lf].core].append(lf)
    ranked = sorted(under[src_core], key=lambda a: (-topo.steady[a].kbps, a))
    legit = ranked[:n_legit]
    dests = rng.sample(under[dst_core], len(legit))
    taken = set(legit) | set(dests)
    pool = [a for a in sorted(topo.steady) if a not in taken]
    n_att = int(scn.attackers or 0)
    if n_att > len(pool):
        raise ScenarioError(f"{n_att} attacker ASes requested but only {len(pool)} leaves are free")
    attackers = rng.sample(pool, n_att)
    isd_of = lambda a: topo.ases[a].isd

    def far_side(a):
        c = topo.steady[a].core
        if inter:
            side = src_core if isd_of(a) != isd_of(src_core) else dst_core
        else:
            side = src_core if c == dst_core else dst_core
        return [x for x in under[side] if x not in taken]

    colluder = {a: rng.choice(far_side(a)) for a in attackers}

    chans = {}

    def channel(u, v):
        ch = chans.get((u, v))
        if ch is None:
            ln = topo.link(u, v)
            cap = ln.capacity * scn.request_limit
            cls = FifoLink if fifo else HscfqLink
            ch = chans[(u, v)] = cls(sim, cap, ln.delay_ms, arrive, buffer_pkts)
        return ch

    def down_weight(src, dst):
        sc, dc = topo.steady[src].core, topo.steady[dst].core
        sbw_s = topo.steady_total(sc)
        try:
            if sc == dc:
                return steady_local_share(ShareInputs(topo.steady[src].kbps, sbw_s=sbw_s, sbw_d=1.0))
            return steady_dest_share(ShareInputs(topo.steady[src].kbps, sbw_s=sbw_s, sbw_d=1.0,
                                                 c_sd=book.toward(sc, dc),
                                                 c_stard=max(book.total_into(dc),
                                                             book.toward(sc, dc))))
        except ShareDomainError:
            return 0.0

    route_cache = {}

    def route(src, dst):
        r = route_cache.get((src, dst))
        if r is None:
            path, ci, di = topo.end_to_end(src, dst)
            sc, dc = path[ci], path[di]
            w_u = topo.steady[src].kbps
            core_w = max(book.toward(sc, dc), 1e-3)
            dw = max(down_weight(src, dst), 1e-9)
            hops = []
            for i in range(len(path) - 1):
                if i < ci:
                    hops.append((("up", src), w_u, src, w_u))
                elif i < di:
                    hops.append((("core", sc, dc), core_w, src, w_u))
                else:
                    hops.append((("down", dst), topo.steady[dst].kbps, src, dw))
            r = route_cache[(src, dst)] = (path, hops)
        return r

    stats = defaultdict(int)
    ok_by_sec = defaultdict(lambda: [0, 0])
    latencies = []

    def hop(msg, i):
        path, hops = msg["path"], msg["hops"]
        if msg["rep"]:
            u, v = path[-1 - i], path[-2 - i]
            g, gw, s, sw = hops[len(path) - 2 - i]
        else:
            u, v = path[i], path[i + 1]
            g, gw, s, sw = hops[i]
        msg["i"] = i
        channel(u, v).send(Packet(size, msg, g, gw, s, sw))

    def arrive(pkt):
        msg = pkt.payload
        i = msg["i"] + 1
        if i < len(msg["path"]) - 1:
            hop(msg, i)
            return
        if not msg["rep"]:
            msg["rep"] = True
            if msg["legit"]:
                stats["legit_delivered"] += 1
            else:
                stats["attack_delivered"] += 1
            hop(msg, 0)
            return
        if msg["legit"]:
            dt = sim.now - msg["t"]
            if dt <= timeout_us:
                stats["legit_ok"] += 1
                ok_by_sec[msg["t"] // US_PER_S][0] += 1
                latencies.append(dt / US_PER_MS)

    def sender(src, dst, is_legit):
        path, hops = route(src, dst)

        def send():
            msg = {"path": path, "hops": hops, "rep": False, "legit": is_legit, "t": sim.now,
                   "i": 0}
            if is_legit:
                stats["legit_sent"] += 1
                ok_by_sec[sim.now // US_PER_S][1] += 1
                if events is not None:
                    events.emit(t=sim.now_ms, ev="request", src=src, dst=dst)
            else:
                stats["attack_sent"] += 1
            hop(msg, 0)
        return send

    for src, dst in zip(legit, dests):
        _ramp(sim, scn.request_rate, 0, send_until, sender(src, dst, True))
    for a in attackers:
        for _ in range(hosts):
            _ramp(sim, scn.request_rate, 0, send_until, sender(a, colluder[a], False))
    sim.run(int(duration * US_PER_S))

    m = Metrics(end_s=duration)
    for sec in sorted(ok_by_sec):
        ok, sent = ok_by_sec[sec]
        m.add(float(sec), "legit_success", ok / sent if sent else float("nan"))
    sent = stats["legit_sent"]
    m.set("success_ratio", stats["legit_ok"] / sent if sent else float("nan"))
    m.set("legit_sent", sent)
    m.set("legit_ok", stats["legit_ok"])
    m.set("attack_sent", stats["attack_sent"])
    m.set("attack_delivered", stats["attack_delivered"])
    m.set("attacker_ases", n_att)
    m.set("max_latency_ms", max(latencies) if latencies else float("nan"))
    m.set("events_processed", sim.processed)
    core_ch = chans.get((src_core, topo.core_route(src_core, dst_core)[1]))
    if core_ch is not None:
        m.set("core_request_kbps", core_ch.sent_bytes * 8 / 1000.0 / duration)
    if events is not None:
        m.events = events.records
    return m


# -- coremelt ------------------------------------------------------------------------


def _shares_for(topo: Topology, src: int, dst: int) -> ShareInputs:
    book = topo.contract_book()
    sp, dp = topo.steady[src], topo.steady[dst]
    sc, dc = sp.core, dp.core
    path = topo.core_route(sc, dc)
    sbw_c = min(topo.link(u, v).anatomy.steady for u, v in zip(path, path[1:])) \
        if len(path) > 1 else topo.link(*sp.path[-2:]).anatomy.steady
    c_sd = book.toward(sc, dc) if sc != dc else 1.0
    c_stard = max(book.total_into(dc), c_sd) if sc != dc else 1.0
    return ShareInputs(sbw_u=sp.kbps, sbw_s=topo.steady_total(sc), sbw_c=sbw_c,
                       sbw_d=dp.kbps, c_sd=c_sd, c_stard=c_stard)


def run_coremelt(topo: Topology, scn: Scenario, events: Optional[EventLog] = None) -> Metrics:
    """A 1 MB transfer over an ephemeral reservation while bot pairs flood the core link.

    Bots first try to reserve; whatever is denied floods best-effort at
    ``pair_kbps`` per pair. With ``params.sibra: false`` the transfer itself is
    best-effort with retransmission after ``rto_s``.
    """
    _need_roles(topo, "coremelt", "source", "dest", "left_core", "right_core",
                "attackers_left", "attackers_right")
    r = topo.roles
    S, D, L, R = r["source"], r["dest"], r["left_core"], r["right_core"]
    sim = Simulator(scn.seed)
    rng = sim.rng
    events = events if events is not None else EventLog(enabled=False)
    routers = build_routers(topo, scn.seed, events)
    sibra = bool(scn.param("sibra", True))
    file_bytes = int(scn.param("file_bytes", 1_000_000))
    pkt_bytes = int(scn.param("packet_bytes", 1500))
    send_kbps = float(scn.param("send_kbps", 800.0))
    want_kbps = float(scn.param("reserve_kbps", 1024.0))
    pair_kbps = float(scn.param("pair_kbps", 40.0))
    bot_reserve = float(scn.param("bot_reserve_kbps", 256.0))
    rto_us = int(float(scn.param("rto_s", 1.0)) * US_PER_S)
    max_us = int(float(scn.param("max_s", 120.0)) * US_PER_S)
    be_buffer = int(scn.param("be_buffer", 100))
    start_us = int(float(scn.param("start_s", 1.0)) * US_PER_S)
    pairs = int(scn.attackers or 0)
    path = [S, L, R, D]

    links = {}
    delivered = set()
    stats = defaultdict(int)
    done = {}
    tput = defaultdict(int)

    def link(u, v):
        k = (u, v)
        if k not in links:
            ln = topo.link(u, v)
            links[k] = PriorityLink(sim, ln.capacity, ln.delay_ms, lambda p, k=k: arrive(k, p),
                                    be_buffer)
        return links[k]

    def arrive(k, pkt):
        msg = pkt.payload
        u, v = k
        if msg["kind"] == "bot":
            i = msg["path"].index(v)
            if i + 1 < len(msg["path"]):
                link(v, msg["path"][i + 1]).send(pkt)
            return
        if msg["header"] is not None:
            res = routers[v].forward_data(msg["header"], sim.now_ms)
            if not isinstance(res, Forwarded):
                stats["legit_dropped_" + res.reason.value] += 1
                return
        i = path.index(v)
        if i + 1 < len(path):
            link(v, path[i + 1]).send(pkt)
            return
        seq = msg["seq"]
        if seq not in delivered:
            delivered.add(seq)
            tput[sim.now // US_PER_S] += pkt.size
            if len(delivered) == n_pkts:
                done["t"] = sim.now
                sim.stop()

    # reservation for the transfer
    header = None
    n_pkts = math.ceil(file_bytes / pkt_bytes)
    res_kbps = 0.0
    if sibra:
        shares = _shares_for(topo, S, D)
        h = SibraHeader(new_flow_id(rng), make_config(0, class_for_rate(Kind.EPHEMERAL, want_kbps),
                                                      lifetime=EPHEMERAL_LIFETIME),
                        Flags.EPHEMERAL)
        out = walk_request(routers, path, h, 0.0, shares, source=S)
        if all(isinstance(x, Admitted) for x in out):
            walk_confirm(routers, path, h, 1.0)
            header = h
            res_kbps = h.config.fwd_class.rate
        m_share = eph_path_share(shares)
    else:
        m_share = float("nan")

    # bot pairs
    left, right = r["attackers_left"], r["attackers_right"]
    bot_admitted = 0
    for p in range(pairs):
        a, b = left[p % len(left)], right[(p // len(left)) % len(right)]
        bpath = [a, L, R, b]
        reserved = False
        if sibra:
            h = SibraHeader(new_flow_id(rng), make_config(0, class_for_rate(Kind.EPHEMERAL, bot_reserve),
                                                          lifetime=EPHEMERAL_LIFETIME),
                            Flags.EPHEMERAL)
            out = walk_request(routers, bpath, h, 0.0, _shares_for(topo, a, b), source=a)
            reserved = all(isinstance(x, Admitted) for x in out)
            if reserved:
                walk_confirm(routers, bpath, h, 1.0)
                bot_admitted += 1
        rate = min(pair_kbps, bot_reserve) if reserved else pair_kbps
        period = max(1, int(round(pkt_bytes * 8 * US_PER_MS / rate)))

        def flood(a=a, bpath=bpath, reserved=reserved, rate=rate):
            link(a, L).send(Packet(pkt_bytes, {"kind": "bot", "path": bpath}, sub=("bot", a),
                                   sweight=rate, reserved=reserved))
        sim.every(period, flood, rng.randrange(period), max_us)

    # paced sender; best-effort mode retransmits after an RTO
    gap = int(round(pkt_bytes * 8 * US_PER_MS / send_kbps))
    nxt = [0]
    retx = []

    def check(seq):
        if seq not in delivered and "t" not in done:
            retx.append(seq)
            stats["retransmissions"] += 1

    def pace():
        if "t" in done:
            return
        if retx:
            seq = retx.pop(0)
        elif nxt[0] < n_pkts:
            seq = nxt[0]
            nxt[0] += 1
        else:
            sim.after(gap, pace)
            return
        size = pkt_bytes if seq < n_pkts - 1 else file_bytes - pkt_bytes * (n_pkts - 1)
        hdr = None
        if header is not None:
            hdr = header.copy()
            hdr.hops = 0
            hdr.flags = Flags.EPHEMERAL | Flags.DATA
            res = routers[S].forward_data(hdr, sim.now_ms)
            if not isinstance(res, Forwarded):
                stats["legit_dropped_" + res.reason.value] += 1
        link(S, L).send(Packet(size, {"kind": "legit", "seq": seq, "header": hdr},
                               sub="legit", sweight=res_kbps or 1.0, reserved=header is not None))
        if header is None:
            sim.after(rto_us, check, seq)
        sim.after(gap, pace)

    sim.at(start_us, pace)
    sim.run(max_us)

    m = Metrics(end_s=sim.now / US_PER_S)
    for sec in sorted(tput):
        m.add(float(sec), "legit_kbps", tput[sec] * 8 / 1000.0)
    core = links.get((L, R))
    if core is not None:
        m.set("core_be_dropped", core.dropped)
    m.set("transfer_time_s", (done["t"] - start_us) / US_PER_S if "t" in done else float("nan"))
    m.set("reserved_kbps", res_kbps)
    m.set("path_share_kbps", m_share)
    m.set("bot_pairs", pairs)
    m.set("bot_reservations", bot_admitted)
    m.set("packets", n_pkts)
    for k in sorted(stats):
        m.set(k, stats[k])
    if events.enabled:
        m.events = events.records
    return m


# -- lower bound under growing botnets -----------------------------------------------


def run_lowerbound(topo: Topology, scn: Scenario, events: Optional[EventLog] = None) -> Metrics:
    """Benign DILL toward a destination whose down-path is flooded by attacker cores.

    Attacker up-paths (``params.base_upaths`` per attacker core, times the
    ``attackers`` scale, doubled at the midpoint) get steady classes drawn
    uniformly over class indices. Each hosts ``params.per_upath`` attackers
    that request random ephemeral classes once per second and greedily accept
    offers. The benign source renews its reservation every SIBRA second.
    """
    _need_roles(topo, "lowerbound", "dest", "dest_core", "benign_core", "benign_source",
                "attacker_cores")
    r = topo.roles
    D, DC, BC, B = r["dest"], r["dest_core"], r["benign_core"], r["benign_source"]
    acs = list(r["attacker_cores"])
    sim = Simulator(scn.seed)
    rng = sim.rng
    events = events if events is not None else EventLog(enabled=False)
    routers = build_routers(topo, scn.seed, events)
    book = topo.contract_book()
    duration = float(scn.param("duration_s", 60.0))
    end_us = int(duration * US_PER_S)
    scale = int(scn.attackers if scn.attackers is not None else 1)
    base = int(scn.param("base_upaths", 1))
    per_upath = int(scn.param("per_upath", 5))
    double = bool(scn.param("double_at_midpoint", True))
    fair = bool(scn.param("fair_share", True))
    benign_upaths = int(scn.param("benign_core_upaths", 4))
    benign_start = int(float(scn.param("benign_start_s", 2.0)) * US_PER_S)
    max_class = int(scn.param("attacker_max_class", 11))

    sbw_d = topo.steady[D].kbps
    c_stard = sum(book.toward(c, DC) for c in [BC] + acs)
    core_sbw = {BC: topo.steady[B].kbps * benign_upaths}
    upaths = {c: [] for c in acs}  # core -> [(id, kbps)]

    def add_upaths(n):
        for c in acs:
            for _ in range(n):
                uid = f"u{c}-{len(upaths[c])}"
                upaths[c].append((uid, BandwidthClass(Kind.STEADY, rng.randrange(12)).rate))
                for _a in range(per_upath):
                    _ramp(sim, 1.0, sim.now, end_us, attacker(c, len(upaths[c]) - 1))
            core_sbw[c] = sum(k for _, k in upaths[c])

    def shares(core, sbw_u):
        if not fair:
            return None
        return ShareInputs(sbw_u=sbw_u, sbw_s=core_sbw[core], sbw_c=topo.link(core, DC).anatomy.steady,
                           sbw_d=sbw_d, c_sd=book.toward(core, DC), c_stard=c_stard)

    live = {}  # flow -> (path, header)
    stats = defaultdict(int)

    def request(path, cls, sh, source, index=0):
        h = SibraHeader(new_flow_id(rng), make_config(tick_of_ms(sim.now_ms), cls,
                                                      lifetime=EPHEMERAL_LIFETIME, index=index),
                        Flags.EPHEMERAL)
        out = walk_request(routers, path, h, sim.now_ms, sh, source)
        if all(isinstance(x, Admitted) for x in out):
            walk_confirm(routers, path, h, sim.now_ms)
            live[h.flow_id] = (path, h)
            return h, None
        offer = min(k for _, k in h.offers)
        return None, offer

    def attacker(core, k):
        def go():
            uid, kbps = upaths[core][k]
            path = [core, DC, D]
            sh = shares(core, kbps)
            stats["attacker_requests"] += 1
            h, offer = request(path, BandwidthClass(Kind.EPHEMERAL, rng.randrange(max_class + 1)),
                               sh, uid)
            if h is None and offer:
                c = class_at_most(Kind.EPHEMERAL, offer)
                if c is not None:
                    h, _ = request(path, c, sh, uid)
            if h is not None:
                stats["attacker_admitted"] += 1
        return go

    bpath = [B, BC, DC, D]
    b_sh = shares(BC, topo.steady[B].kbps) if fair else None
    b_cap = eph_path_share(shares(BC, topo.steady[B].kbps) or
                           ShareInputs(sbw_u=topo.steady[B].kbps, sbw_s=core_sbw[BC],
                                       sbw_c=1e9, sbw_d=sbw_d, c_sd=book.toward(BC, DC),
                                       c_stard=c_stard))
    benign = {"h": None, "classes": []}

    def benign_renew():
        target = class_at_most(Kind.EPHEMERAL, b_cap)
        now_tick = tick_of_ms(sim.now_ms)
        cur = benign["h"]
        if cur is not None and is_expired(cur.config.expiration, now_tick):
            live.pop(cur.flow_id, None)
            cur = benign["h"] = None
        if cur is None:
            h, offer = request(bpath, target, b_sh, "benign")
            if h is None and offer:
                c = class_at_most(Kind.EPHEMERAL, offer)
                if c is not None:
                    h, _ = request(bpath, c, b_sh, "benign")
            if h is None:
                stats["benign_denied"] += 1
                benign["classes"].append(0.0)
                return
            benign["h"] = h
            benign["classes"].append(h.config.fwd_class.rate)
            return
        idx = (cur.config.reservation_index + 1) % 16
        new = SibraHeader(cur.flow_id, make_config(now_tick, target, lifetime=EPHEMERAL_LIFETIME,
                                                   index=idx), Flags.EPHEMERAL | Flags.RENEWAL)
        ok = True
        for i, as_id in enumerate(bpath):
            ingress = routers[as_id].ifid(bpath[i - 1]) if i else 0
            egress = routers[as_id].ifid(bpath[i + 1]) if i + 1 < len(bpath) else 0
            res = routers[as_id].renew_reservation(new, cur, ingress, egress, sim.now_ms, b_sh,
                                                   "benign")
            ok = ok and isinstance(res, Admitted)
        if ok:
            stats["benign_renewals"] += 1
            new.flags = Flags.EPHEMERAL
            benign["h"] = new
            live.pop(cur.flow_id, None)
            live[new.flow_id] = (bpath, new)
            benign["classes"].append(new.config.fwd_class.rate)
        else:
            stats["benign_renewal_failed"] += 1
            benign["classes"].append(cur.config.fwd_class.rate)

    def tick():
        now_tick = tick_of_ms(sim.now_ms)
        for rt in routers.values():
            rt.reclaim_expired(now_tick)
        for f in [f for f, (_, h) in live.items() if is_expired(h.config.expiration, now_tick)]:
            del live[f]

    def keepalive():
        for f, (path, h) in list(live.items()):
            d = h.copy()
            d.flags = Flags.EPHEMERAL | Flags.DATA
            walk_data(routers, path, d, sim.now_ms)

    out_key = (routers[DC].ifid(D), "out")
    m = Metrics(end_s=duration)

    def sample():
        st = routers[DC].table[out_key]
        avail = st.available(Kind.EPHEMERAL)
        own = benign["h"].config.fwd_class.rate if benign["h"] is not None else 0.0
        room = avail + own
        if fair:
            used = routers[DC].fair_usage.get((out_key, "benign"), 0.0)
            room = min(room, b_cap - used + own)
        t = sim.now_s
        m.add(t, "reservable", room)
        m.add(t, "available", avail)
        m.add(t, "benign_reserved", own)
        m.add(t, "attacker_reserved", st.reserved[Kind.EPHEMERAL] - own)
        m.add(t, "attacker_upaths", sum(len(v) for v in upaths.values()))

    sim.every(TICK_US, tick, 0, end_us)
    sim.every(TICK_US, keepalive, 5 * US_PER_MS, end_us)
    sim.every(100 * US_PER_MS, lambda: [rt.sweep_pending(sim.now_ms) for rt in routers.values()],
              50 * US_PER_MS, end_us)
    sim.at(0, add_upaths, base * scale)
    if double:
        sim.at(end_us // 2, add_upaths, base * scale)
    sim.every(TICK_US, benign_renew, benign_start, end_us)
    sim.every(US_PER_S, sample, US_PER_S // 2, end_us)
    sim.run(end_us)

    reservable = [v for _, v in m.series("reservable")]
    tail = reservable[len(reservable) * 3 // 4:]
    mean = statistics.fmean(tail) if tail else float("nan")
    cv = statistics.pstdev(tail) / mean if tail and mean > 0 else float("nan")
    admitted = [c for c in benign["classes"] if c > 0]
    m.set("benign_share_kbps", b_cap)
    m.set("benign_class_min_kbps", min(benign["classes"]) if benign["classes"] else 0.0)
    m.set("benign_class_max_kbps", max(admitted) if admitted else 0.0)
    m.set("plateau_mean_kbps", mean)
    m.set("plateau_cv", cv)
    m.set("attacker_scale", scale)
    m.set("attacker_upaths_final", sum(len(v) for v in upaths.values()))
    for k in sorted(stats):
        m.set(k, stats[k])
    m.benign_classes = benign["classes"]
    if events.enabled:
        m.events = events.records
    return m


# -- loss tolerance ----------------------------------------------------------------


def run_loss(topo: Topology, scn: Scenario, events: Optional[EventLog] = None) -> Metrics:
    """Bandwidth wasted when requests and replies are lost.

    Each request picks a contiguous path of 5 to 10 ASes on the chain and a
    bandwidth in [50, 6400] kbps. Loss hits every inter-AS hop of requests
    and replies independently with probability q, chosen so that a whole
    one-way traversal is lost with probability ``loss_rate``. Random draws
    do not depend on the loss rate, so runs at different rates are coupled.

    r_waste = reserved bandwidth-time held for flows whose source never
    got a reply, over all reserved bandwidth-time, both taken from the
    routers' debit and credit records.
    """
    _need_roles(topo, "loss", "chain")
    chain = list(topo.roles["chain"])
    lo, hi = scn.param("path_len", [5, 10])
    if len(chain) < hi:
        raise ScenarioError(f"loss needs a chain of at least {hi} ASes")
    sim = Simulator(scn.seed)
    rng = sim.rng
    log = events if events is not None else EventLog()
    routers = build_routers(topo, scn.seed, log)
    rate = float(scn.param("requests_per_s", 50.0))
    send_s = float(scn.param("send_s", 40.0))
    drain_s = float(scn.param("drain_s", 24.0))
    rtt_ms = float(scn.param("rtt_ms", 200.0))
    bw_lo, bw_hi = scn.param("bandwidth_kbps", [50.0, 6400.0])
    p = scn.loss_rate
    end_us = int((send_s + drain_s) * US_PER_S)

    n_req = int(rate * send_s)
    plan = []
    for k in range(n_req):
        L = rng.randint(lo, hi)
        s = rng.randrange(len(chain) - L + 1)
        bw = rng.uniform(bw_lo, bw_hi)
        t = int(k * US_PER_S / rate) + rng.randrange(int(US_PER_S / rate))
        u_req = [rng.random() for _ in range(L - 1)]
        u_rep = [rng.random() for _ in range(L - 1)]
        flow = new_flow_id(rng)
        plan.append((t, chain[s:s + L], class_for_rate(Kind.EPHEMERAL, bw), u_req, u_rep, flow))

    ok_flows = {}
    stats = defaultdict(int)

    def start(t, path, cls, u_req, u_rep, flow):
        L = len(path)
        q = 1 - (1 - p) ** (1 / (L - 1))
        d_us = int(rtt_ms / 2 / (L - 1) * US_PER_MS)
        h = SibraHeader(flow, make_config(tick_of_ms(sim.now_ms), cls, lifetime=EPHEMERAL_LIFETIME),
                        Flags.EPHEMERAL)
        stats["requests"] += 1

        def at_as(i):
            ingress = routers[path[i]].ifid(path[i - 1]) if i else 0
            egress = routers[path[i]].ifid(path[i + 1]) if i + 1 < L else 0
            routers[path[i]].admit_reservation(h, ingress, egress, sim.now_ms)
            if i + 1 == L:
                if h.failed:
                    stats["denied"] += 1
                    return
                routers[path[i]].confirm_reservation(h, sim.now_ms)
                back(i - 1)
                return
            if u_req[i] < q:
                stats["request_lost"] += 1
                return
            sim.after(d_us, at_as, i + 1)

        def back(i):
            # reply crossing the hop from path[i+1] to path[i]
            if u_rep[i] < q:
                stats["reply_lost"] += 1
                return

            def arrive():
                routers[path[i]].confirm_reservation(h, sim.now_ms)
                if i == 0:
                    ok_flows[flow] = (path, h)
                    keep(path, h)
                else:
                    back(i - 1)
            sim.after(d_us, arrive)

        at_as(0)

    def keep(path, h):
        d = h.copy()
        d.flags = Flags.EPHEMERAL | Flags.DATA
        walk_data(routers, path, d, sim.now_ms)

    def keepalive():
        now_tick = tick_of_ms(sim.now_ms)
        for f, (path, h) in ok_flows.items():
            if not is_expired(h.config.expiration, now_tick):
                keep(path, h)

    def tick():
        now_tick = tick_of_ms(sim.now_ms)
        for rt in routers.values():
            rt.reclaim_expired(now_tick)

    for item in plan:
        sim.at(item[0], start, *item)
    sim.every(100 * US_PER_MS, lambda: [rt.sweep_pending(sim.now_ms) for rt in routers.values()],
              0, end_us)
    sim.every(TICK_US, tick, 0, end_us + 1)
    sim.every(TICK_US, keepalive, US_PER_MS, end_us)
    sim.run(end_us)

    total, unused, open_ = waste_from_log(log.records, set(ok_flows), end_us / US_PER_MS)
    m = Metrics(end_s=end_us / US_PER_S)
    m.set("r_waste", unused / total if total > 0 else 0.0)
    m.set("reserved_kbps_s", total / 1000.0)
    m.set("unused_kbps_s", unused / 1000.0)
    m.set("loss_rate", p)
    m.set("successful", len(ok_flows))
    m.set("open_at_end", open_)
    for k in sorted(stats):
        m.set(k, stats[k])
    if events is not None:
        m.events = log.records
    return m


def waste_from_log(records, ok_flows: set, end_ms: float):
    """(total, unused) reserved kbps·ms from debit/credit records, plus debits still open."""
    opened = {}
    total = unused = 0.0
    ok_hex = {f.hex() for f in ok_flows}
    for rec in records:
        ev = rec["ev"]
        if ev not in ("debit", "credit"):
            continue
        k = (rec["as"], rec["flow"], rec["key"], rec["kind"])
        if ev == "debit":
            opened.setdefault(k, []).append((rec["t"], rec["kbps"]))
            continue
        t0, kbps = opened[k].pop(0)
        amount = kbps * (rec["t"] - t0)
        total += amount
        if rec["flow"] not in ok_hex:
            unused += amount
    n_open = 0
    for k, lst in opened.items():
        for t0, kbps in lst:
            n_open += 1
            amount = kbps * (end_ms - t0)
            total += amount
            if k[1] not in ok_hex:
                unused += amount
    return total, unused, n_open


# -- DILL ----------------------------------------------------------------------------


def run_dill(topo: Topology, scn: Scenario, events: Optional[EventLog] = None) -> Metrics:
    """A continuously renewed ephemeral reservation end to end along the chain."""
    _need_roles(topo, "dill", "chain")
    chain = list(topo.roles["chain"])
    sim = Simulator(scn.seed)
    rng = sim.rng
    events = events if events is not None else EventLog(enabled=False)
    routers = build_routers(topo, scn.seed, events)
    duration = float(scn.param("duration_s", 60.0))
    end_us = int(duration * US_PER_S)
    cls = class_for_rate(Kind.EPHEMERAL, float(scn.param("kbps", 4096.0)))
    state = {"h": None}
    stats = defaultdict(int)
    m = Metrics(end_s=duration)

    def step():
        now_tick = tick_of_ms(sim.now_ms)
        for rt in routers.values():
            rt.reclaim_expired(now_tick)
        cur = state["h"]
        if cur is None or is_expired(cur.config.expiration, now_tick):
            h = SibraHeader(new_flow_id(rng), make_config(now_tick, cls, lifetime=EPHEMERAL_LIFETIME),
                            Flags.EPHEMERAL)
            out = walk_request(routers, chain, h, sim.now_ms)
            if all(isinstance(x, Admitted) for x in out):
                walk_confirm(routers, chain, h, sim.now_ms)
                state["h"] = h
                stats["setups"] += 1
            else:
                state["h"] = None
                stats["setup_failed"] += 1
        else:
            new = SibraHeader(cur.flow_id, make_config(now_tick, cls, lifetime=EPHEMERAL_LIFETIME,
                                                       index=(cur.config.reservation_index + 1) % 16),
                              Flags.EPHEMERAL | Flags.RENEWAL)
            ok = True
            for i, as_id in enumerate(chain):
                ingress = routers[as_id].ifid(chain[i - 1]) if i else 0
                egress = routers[as_id].ifid(chain[i + 1]) if i + 1 < len(chain) else 0
                ok = isinstance(routers[as_id].renew_reservation(new, cur, ingress, egress,
                                                                 sim.now_ms), Admitted) and ok
            if ok:
                new.flags = Flags.EPHEMERAL
                state["h"] = new
                stats["renewals"] += 1
            else:
                stats["renewal_failed"] += 1
        h = state["h"]
        if h is not None:
            d = h.copy()
            d.flags = Flags.EPHEMERAL | Flags.DATA
            res = walk_data(routers, chain, d, sim.now_ms + 1)
            up = isinstance(res, Forwarded)
        else:
            up = False
        stats["ticks"] += 1
        stats["ticks_up"] += int(up)
        m.add(sim.now_s, "reserved_kbps", cls.rate if up else 0.0)

    sim.every(TICK_US, step, 0, end_us)
    sim.run(end_us)
    m.set("availability", stats["ticks_up"] / stats["ticks"] if stats["ticks"] else float("nan"))
    for k in sorted(stats):
        m.set(k, stats[k])
    if events.enabled:
        m.events = events.records
    return m


RUNNERS = {
    "doc_intra": lambda t, s, e: run_doc(t, s, False, e),
    "doc_inter": lambda t, s, e: run_doc(t, s, True, e),
    "coremelt": run_coremelt,
    "lowerbound": run_lowerbound,
    "loss": run_loss,
    "dill": run_dill,
}


def run_scenario(topo: Topology, scn: Scenario, events: Optional[EventLog] = None) -> Metrics:
    return RUNNERS[scn.kind](topo, scn, events)
