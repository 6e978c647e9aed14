"""Per-AS reservation state machine: admission, activation, forwarding, reclaim.

Each neighbor gets an interface id 1..k (sorted by neighbor AS id); id 0 is
the AS itself (endpoints inside it). Bandwidth is tracked per interface and
direction, ``(ifid, "in")`` for traffic arriving from that neighbor and
``(ifid, "out")`` for traffic leaving toward it. Interface 0 has no entry.

All methods take an explicit ``now_ms`` so the router is a pure function of
its inputs and the event order.
"""
from __future__ import annotations

import enum
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

from sibra.bloom import BloomFilter
from sibra.classes import (Direction, Kind, LinkAnatomy, REL_TOL,
                           TICK_MS, class_at_most, is_expired, rate_le, tick_of_ms)
from sibra.errors import DuplicateFlowId, MalformedHeader, UnknownFlow
from sibra.fairshare import ShareInputs, eph_path_share, steady_dest_share
from sibra.tokens import Flags, MacKey, ReservationToken, SibraHeader, issue_token, verify_token

log = logging.getLogger(__name__)

IN, OUT = "in", "out"
LOCAL_IF = 0


@dataclass
class RouterConfig:
    pending_timeout_ms: float = 300.0
    ell: int = 1  # reclaim window in SIBRA seconds
    slack_frac: float = 0.05
    seen_capacity: int = 10_000
    seen_fp: float = 0.01

    def __post_init__(self):
        if not 1 <= self.ell <= 5:
            raise ValueError("ell must be in 1..5")


@dataclass
class LinkState:
    anatomy: LinkAnatomy
    reserved: dict = field(default_factory=lambda: {Kind.STEADY: 0.0, Kind.EPHEMERAL: 0.0})

    def available(self, kind: Kind) -> float:
        return max(0.0, self.anatomy.partition(kind) - self.reserved[kind])


@dataclass
class Entry:
    """A pending or active reservation at this AS."""
    flow_id: bytes
    config: object
    ingress: int
    egress: int
    debits: list  # (key, kind, kbps)
    created_ms: float
    source: object = None
    activated_ms: Optional[float] = None
    fair_key: object = None


@dataclass(frozen=True)
class Admitted:
    token: ReservationToken


@dataclass(frozen=True)
class Denied:
    offer: float
    reason: str


class DropReason(enum.Enum):
    BAD_TOKEN = "bad_token"
    EXPIRED = "expired"
    BLACKLISTED = "blacklisted"


@dataclass(frozen=True)
class Forwarded:
    egress: int
    activated: bool = False


@dataclass(frozen=True)
class Dropped:
    reason: DropReason


class EventLog:
    """Append-only structured log; one dict per event, serializable as JSONL."""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.records: list[dict] = []

    def emit(self, **rec):
        if self.enabled:
            self.records.append(rec)

    def of(self, *events):
        return [r for r in self.records if r["ev"] in events]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


def replay_ledger(records: Iterable[dict], capacities: Optional[dict] = None) -> dict:
    """Rebuild per (as, key, kind) balances from debit/credit records.

    Raises AssertionError if a balance goes negative or, when ``capacities``
    maps (as, key, kind) to a partition size, above that size.
    """
    bal = defaultdict(float)
    for r in records:
        if r["ev"] not in ("debit", "credit"):
            continue
        k = (r["as"], r["key"], r["kind"])
        bal[k] += r["kbps"] if r["ev"] == "debit" else -r["kbps"]
        tol = REL_TOL * max(1.0, abs(r["kbps"])) * 16
        if bal[k] < -tol:
            raise AssertionError(f"negative balance at {k}: {bal[k]}")
        if capacities is not None and k in capacities and not rate_le(bal[k], capacities[k]):
            raise AssertionError(f"over-admission at {k}: {bal[k]} > {capacities[k]}")
    return dict(bal)


def _key_str(key) -> str:
    return f"{key[0]}:{key[1]}"


class Router:
    def __init__(self, as_id: int, key: MacKey, links: dict, config: Optional[RouterConfig] = None,
                 events: Optional[EventLog] = None):
        self.as_id = as_id
        self.key = key
        self.cfg = config or RouterConfig()
        self.events = events if events is not None else EventLog()
        self.neighbors = sorted(links)
        self._ifid = {n: i + 1 for i, n in enumerate(self.neighbors)}
        self.table: dict = {}
        for n, anatomy in links.items():
            i = self._ifid[n]
            self.table[(i, IN)] = LinkState(anatomy)
            self.table[(i, OUT)] = LinkState(anatomy)
        self.pending: dict[bytes, Entry] = {}
        self.accounting: dict[bytes, Entry] = {}
        self.fair_usage = defaultdict(float)  # (egress key, source) -> ephemeral kbps
        self.blacklist: dict[bytes, int] = {}  # flow -> last blacklisted tick
        self._seen = BloomFilter(self.cfg.seen_capacity, self.cfg.seen_fp, salt=b"cur")
        self._seen_prev = BloomFilter(self.cfg.seen_capacity, self.cfg.seen_fp, salt=b"prev")
        self._window_start = 0
        self._pinned: dict = {}

    # -- interfaces -------------------------------------------------------

    def ifid(self, neighbor: Optional[int]) -> int:
        """Interface id toward ``neighbor``; None (local endpoint) maps to 0."""
        if neighbor is None or neighbor == self.as_id:
            return LOCAL_IF
        try:
            return self._ifid[neighbor]
        except KeyError:
            raise ValueError(f"AS {self.as_id} has no link to AS {neighbor}") from None

    def neighbor_of(self, ifid: int) -> Optional[int]:
        return None if ifid == LOCAL_IF else self.neighbors[ifid - 1]

    def reserved(self, key, kind: Kind) -> float:
        return self.table[key].reserved[kind]

    # -- ledger helpers ---------------------------------------------------

    def _debit_plan(self, cfg, ingress: int, egress: int, fwd_rate: float, rev_rate: float):
        plan = []
        if cfg.direction in (Direction.FORWARD, Direction.BIDIRECTIONAL):
            plan += [((ingress, IN), fwd_rate), ((egress, OUT), fwd_rate)]
        if cfg.direction == Direction.REVERSE:
            plan += [((egress, IN), fwd_rate), ((ingress, OUT), fwd_rate)]
        if cfg.direction == Direction.BIDIRECTIONAL:
            plan += [((egress, IN), rev_rate), ((ingress, OUT), rev_rate)]
        return [(k, r) for k, r in plan if k[0] != LOCAL_IF and r > 0]

    def _debit(self, flow, debits, now_ms):
        for key, kind, kbps in debits:
            self.table[key].reserved[kind] += kbps
            self.events.emit(t=now_ms, ev="debit", flow=flow.hex(), key=_key_str(key),
                             kind=kind.name[0], kbps=kbps, **{"as": self.as_id})

    def _credit(self, flow, debits, now_ms, why):
        for key, kind, kbps in debits:
            st = self.table[key]
            st.reserved[kind] = max(0.0, st.reserved[kind] - kbps)
            self.events.emit(t=now_ms, ev="credit", flow=flow.hex(), key=_key_str(key),
                             kind=kind.name[0], kbps=kbps, why=why, **{"as": self.as_id})

    def _release(self, e: Entry, now_ms, why):
        self._credit(e.flow_id, e.debits, now_ms, why)
        if e.fair_key is not None:
            for key, kind, kbps in e.debits:
                if key == e.fair_key[0] and kind == Kind.EPHEMERAL:
                    self.fair_usage[e.fair_key] = max(0.0, self.fair_usage[e.fair_key] - kbps)

    def _headroom(self, plan, kind, fair_key, cap):
        room = min((self.table[k].available(kind) for k, _ in plan), default=float("inf"))
        if cap is not None:
            room = min(room, max(0.0, cap - self.fair_usage[fair_key]))
        return room

    # -- admission --------------------------------------------------------

    def admit_reservation(self, header: SibraHeader, ingress: int, egress: int, now_ms: float,
                          shares: Optional[ShareInputs] = None, source=None):
        """Admission control at this AS for a request traveling ingress -> egress.

        ``shares`` bounds an ephemeral request by its path fair share, tracked
        per ``source`` (the requesting up-path) on the egress interface.
        """
        if header.flags & (Flags.CONFIRM | Flags.DATA | Flags.KEEPALIVE):
            raise MalformedHeader("not a reservation request")
        cfg = header.config
        flow = header.flow_id
        kind = cfg.kind
        plan = self._debit_plan(cfg, ingress, egress, cfg.fwd_class.rate, cfg.rev_class.rate)
        fair_key = cap = None
        if kind == Kind.EPHEMERAL and shares is not None:
            fair_key = ((egress, OUT) if egress != LOCAL_IF else (ingress, IN), source)
            cap = eph_path_share(shares)

        if header.failed:
            offer = self._offer(kind, self._headroom(plan, kind, fair_key, cap))
            header.offers.append((self.as_id, offer))
            self.events.emit(t=now_ms, ev="offer", flow=flow.hex(), kbps=offer, **{"as": self.as_id})
            return Denied(offer, "upstream_denied")

        existing = self.pending.get(flow) or self.accounting.get(flow)
        if existing is not None:
            if (existing.config, existing.ingress, existing.egress) != (cfg, ingress, egress):
                raise DuplicateFlowId(flow.hex())
            tok = issue_token(self.key, ingress, egress, header.request_info(), header.prev_token())
            self._append_token(header, tok)
            return Admitted(tok)

        rate_ok = all(self.table[k].available(kind) + REL_TOL * r >= r for k, r in plan)
        fair_ok = cap is None or rate_le(self.fair_usage[fair_key] + cfg.fwd_class.rate, cap)
        if not (rate_ok and fair_ok):
            offer = self._offer(kind, self._headroom(plan, kind, fair_key, cap))
            header.flags |= Flags.FAILED
            header.decline_as = self.as_id
            header.offers.append((self.as_id, offer))
            header.hops = 0
            reason = "fair_share" if rate_ok else "capacity"
            self.events.emit(t=now_ms, ev="deny", flow=flow.hex(), kbps=cfg.fwd_class.rate,
                             offer=offer, reason=reason, **{"as": self.as_id})
            return Denied(offer, reason)

        debits = [(k, kind, r) for k, r in plan]
        self._debit(flow, debits, now_ms)
        if fair_key is not None:
            self.fair_usage[fair_key] += cfg.fwd_class.rate
        self.pending[flow] = Entry(flow, cfg, ingress, egress, debits, now_ms, source,
                                   fair_key=fair_key)
        tok = issue_token(self.key, ingress, egress, header.request_info(), header.prev_token())
        self._append_token(header, tok)
        self.events.emit(t=now_ms, ev="admit", flow=flow.hex(), kbps=cfg.fwd_class.rate,
                         kind=kind.name[0], **{"as": self.as_id})
        return Admitted(tok)

    @staticmethod
    def _append_token(header, tok):
        # a request carries exactly the tokens of the ASes already traversed
        del header.tokens[header.hops:]
        header.tokens.append(tok)
        header.hops += 1

    @staticmethod
    def _offer(kind, room) -> float:
        c = class_at_most(kind, room)
        return 0.0 if c is None else c.rate

    # -- lifecycle --------------------------------------------------------

    def confirm_reservation(self, header_or_flow, now_ms: float) -> None:
        flow = getattr(header_or_flow, "flow_id", header_or_flow)
        if flow in self.accounting:
            return
        e = self.pending.pop(flow, None)
        if e is None:
            raise UnknownFlow(flow.hex())
        self._activate(e, now_ms, "confirm")

    def _activate(self, e: Entry, now_ms, how):
        e.activated_ms = now_ms
        self.accounting[e.flow_id] = e
        self.events.emit(t=now_ms, ev="activate", flow=e.flow_id.hex(), how=how,
                         **{"as": self.as_id})

    def state_of(self, flow: bytes) -> str:
        if flow in self.pending:
            return "pending"
        if flow in self.accounting:
            return "active"
        return "none"

    def forward_data(self, header: SibraHeader, now_ms: float):
        """Fastpath: verify this AS's token and advance the hops cursor."""
        flow = header.flow_id
        now_tick = tick_of_ms(now_ms)
        if self.is_blacklisted(flow, now_tick):
            return Dropped(DropReason.BLACKLISTED)
        if is_expired(header.config.expiration, now_tick):
            return Dropped(DropReason.EXPIRED)
        if header.hops >= len(header.tokens):
            return Dropped(DropReason.BAD_TOKEN)
        tok = header.tokens[header.hops]
        if not verify_token(self.key, tok, header.request_info(), header.prev_token()):
            return Dropped(DropReason.BAD_TOKEN)
        activated = False
        if flow in self.pending and flow not in self._seen and flow not in self._seen_prev:
            self._activate(self.pending.pop(flow), now_ms, "data")
            activated = True
        self._seen.add(flow)
        header.hops += 1
        return Forwarded(tok.egress, activated)

    def sweep_pending(self, now_ms: float) -> int:
        stale = [f for f, e in self.pending.items()
                 if now_ms - e.created_ms > self.cfg.pending_timeout_ms]
        for f in stale:
            e = self.pending.pop(f)
            self._release(e, now_ms, "sweep")
            self.events.emit(t=now_ms, ev="sweep", flow=f.hex(), **{"as": self.as_id})
        return len(stale)

    def reclaim_expired(self, now_tick: int) -> int:
        """Credit back expired and idle reservations; rotate the seen filters.

        A reservation is idle when no data or keep-alive was seen during the
        last full window of ``ell`` SIBRA seconds and it was active before that
        window opened. Bloom false positives can only delay a reclaim.
        """
        now_ms = now_tick * TICK_MS
        gone = []
        for f, e in self.accounting.items():
            if is_expired(e.config.expiration, now_tick):
                gone.append((f, "expire"))
        window_done = now_tick - self._window_start >= self.cfg.ell
        if window_done:
            start_ms = self._window_start * TICK_MS
            for f, e in self.accounting.items():
                if (f not in self._seen and e.activated_ms < start_ms
                        and not is_expired(e.config.expiration, now_tick)):
                    gone.append((f, "idle"))
        for f, why in gone:
            e = self.accounting.pop(f)
            self._release(e, now_ms, why)
            self.events.emit(t=now_ms, ev="reclaim", flow=f.hex(), why=why, **{"as": self.as_id})
        for f in [f for f, t in self.blacklist.items() if t < now_tick]:
            del self.blacklist[f]
        if window_done:
            self._seen_prev, self._seen = self._seen, self._seen_prev
            self._seen.clear()
            self._window_start = now_tick
        return len(gone)

    # -- renewal ----------------------------------------------------------

    def renew_reservation(self, header: SibraHeader, old_header: SibraHeader, ingress: int,
                          egress: int, now_ms: float, shares: Optional[ShareInputs] = None,
                          source=None):
        """Renew an existing reservation; only the bandwidth delta is re-admitted.

        ``old_header`` carries the current tokens; its token at this AS's
        position proves the reservation exists, so no table lookup is needed
        to decide. The accounting entry is then overwritten.
        """
        flow = header.flow_id
        cfg = header.config
        old = old_header.config
        now_tick = tick_of_ms(now_ms)
        pos = header.hops
        if header.failed:
            header.offers.append((self.as_id, 0.0))
            return Denied(0.0, "upstream_denied")

        def deny(reason, offer=0.0):
            header.flags |= Flags.FAILED
            header.decline_as = self.as_id
            header.offers.append((self.as_id, offer))
            header.hops = 0
            self.events.emit(t=now_ms, ev="deny", flow=flow.hex(), kbps=cfg.fwd_class.rate,
                             offer=offer, reason=reason, **{"as": self.as_id})
            return Denied(offer, reason)

        if old_header.flow_id != flow or old.kind != cfg.kind:
            raise MalformedHeader("renewal must keep flow id and class kind")
        if self.is_blacklisted(flow, now_tick):
            return deny("blacklisted")
        if cfg.reservation_index != (old.reservation_index + 1) % 16:
            return deny("bad_index")
        if is_expired(old.expiration, now_tick) or pos >= len(old_header.tokens):
            return deny("old_invalid")
        tok = old_header.tokens[pos]
        if not verify_token(self.key, tok, old_header.request_info(), old_header.prev_token(pos)):
            return deny("old_invalid")

        kind = cfg.kind
        e = self.accounting.get(flow)
        new_plan = self._debit_plan(cfg, ingress, egress, cfg.fwd_class.rate, cfg.rev_class.rate)
        old_amounts = defaultdict(float)
        if e is not None:
            for k, _, r in e.debits:
                old_amounts[k] += r
        deltas = {}
        for k, r in new_plan:
            deltas[k] = deltas.get(k, 0.0) + r
        for k, r in old_amounts.items():
            deltas[k] = deltas.get(k, 0.0) - r
        fair_key = e.fair_key if e is not None else None
        if kind == Kind.EPHEMERAL and shares is not None and fair_key is None:
            fair_key = ((egress, OUT) if egress != LOCAL_IF else (ingress, IN), source)
        cap = eph_path_share(shares) if (shares is not None and kind == Kind.EPHEMERAL) else None
        old_rate = old.fwd_class.rate if e is not None else 0.0
        grow = {k: d for k, d in deltas.items() if d > 0}
        rate_ok = all(self.table[k].available(kind) + REL_TOL * d >= d for k, d in grow.items())
        fair_ok = cap is None or rate_le(
            self.fair_usage[fair_key] - old_rate + cfg.fwd_class.rate, cap)
        if not (rate_ok and fair_ok):
            room = min((self.table[k].available(kind) + old_amounts.get(k, 0.0)
                        for k in deltas), default=float("inf"))
            if cap is not None:
                room = min(room, cap - self.fair_usage[fair_key] + old_rate)
            return deny("fair_share" if rate_ok else "capacity", self._offer(kind, room))

        if e is not None:
            self._release(e, now_ms, "renew")
        debits = [(k, kind, r) for k, r in new_plan]
        self._debit(flow, debits, now_ms)
        if fair_key is not None:
            self.fair_usage[fair_key] += cfg.fwd_class.rate
        ne = Entry(flow, cfg, ingress, egress, debits, now_ms, source,
                   activated_ms=now_ms, fair_key=fair_key)
        if e is not None:
            ne.activated_ms = e.activated_ms
        self.pending.pop(flow, None)
        self.accounting[flow] = ne
        new_tok = issue_token(self.key, ingress, egress, header.request_info(), header.prev_token())
        self._append_token(header, new_tok)
        self.events.emit(t=now_ms, ev="renew", flow=flow.hex(), kbps=cfg.fwd_class.rate,
                         index=cfg.reservation_index, **{"as": self.as_id})
        return Admitted(new_tok)

    # -- policing hooks ---------------------------------------------------

    def blacklist_flow(self, flow: bytes, until_tick: int) -> None:
        self.blacklist[flow] = max(until_tick, self.blacklist.get(flow, until_tick))

    def is_blacklisted(self, flow: bytes, now_tick: int) -> bool:
        t = self.blacklist.get(flow)
        return t is not None and now_tick <= t

    # -- multiplexing and dynamic shares ----------------------------------

    def apply_multiplexing(self, key) -> float:
        """Best-effort budget on ``key``: its own part plus unreserved slack-free leftovers."""
        st = self.table[key]
        a = st.anatomy
        budget = a.besteffort
        for kind in (Kind.STEADY, Kind.EPHEMERAL):
            part = a.partition(kind)
            budget += max(0.0, part - st.reserved[kind] - self.cfg.slack_frac * part)
        return budget

    def dynamic_downpath_share(self, users: dict, congested: bool, now_ms: float,
                               budget: Optional[float] = None) -> dict:
        """Steady down-path shares among actively sending users.

        ``users`` maps a user id to its ShareInputs. Uncongested, each user may
        use the whole budget (first come, first served). Congested, the budget
        is split by contract-and-up-path weights over the active users only and
        each computed share is held for one second.
        """
        if not users:
            return {}
        if budget is None:
            budget = max(u.sbw_d for u in users.values())
        if not congested:
            return {uid: budget for uid in users}
        out = {}
        fresh = {uid: u for uid, u in users.items()
                 if uid not in self._pinned or self._pinned[uid][1] <= now_ms}
        if fresh:
            weights = {uid: steady_dest_share(_unit_down(u)) for uid, u in users.items()}
            total = sum(weights.values())
            for uid in fresh:
                share = budget * weights[uid] / total if total > 0 else 0.0
                self._pinned[uid] = (share, now_ms + 1000.0)
        for uid in users:
            out[uid] = self._pinned[uid][0]
        return out


def _unit_down(u: ShareInputs) -> ShareInputs:
    # weight only: evaluate the down-path formula with a unit down-path
    return ShareInputs(sbw_u=u.sbw_u, beta=u.beta, sbw_s=u.sbw_s, sbw_ustar=u.sbw_ustar,
                       sbw_c=u.sbw_c, sbw_d=1.0, c_sd=u.c_sd, c_stard=u.c_stard, rho=u.rho)


def hop_interfaces(routers: dict, path: list, i: int) -> tuple[int, int]:
    """(ingress, egress) interface ids of ``path[i]`` on an AS-level path."""
    r = routers[path[i]]
    ingress = r.ifid(path[i - 1]) if i > 0 else LOCAL_IF
    egress = r.ifid(path[i + 1]) if i + 1 < len(path) else LOCAL_IF
    return ingress, egress


def walk_request(routers: dict, path: list, header: SibraHeader, now_ms: float,
                 shares=None, source=None) -> list:
    """Run a request through every AS on ``path``; denials keep traveling."""
    out = []
    for i, as_id in enumerate(path):
        ingress, egress = hop_interfaces(routers, path, i)
        sh = shares.get(as_id) if isinstance(shares, dict) else shares
        out.append(routers[as_id].admit_reservation(header, ingress, egress, now_ms, sh, source))
    return out


def walk_confirm(routers: dict, path: list, header: SibraHeader, now_ms: float) -> int:
    """Deliver the confirmation backwards along the path; returns ASes activated."""
    n = 0
    for as_id in reversed(path):
        try:
            routers[as_id].confirm_reservation(header, now_ms)
            n += 1
        except UnknownFlow:
            pass
    return n


def walk_data(routers: dict, path: list, header: SibraHeader, now_ms: float):
    """Forward one data packet; returns the first Dropped or the last Forwarded."""
    h = header.copy()
    h.hops = 0
    res = None
    for as_id in path:
        res = routers[as_id].forward_data(h, now_ms)
        if isinstance(res, Dropped):
            return res
    return res
