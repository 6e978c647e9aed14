"""AS-level topologies: data model, YAML loading with line numbers, generators.

Capacities are kbps. Generators scale the real-world link sizes by
``scale`` (1e-3 by default, so a 40 Gbps core link becomes 40 Mbps).
"""
from __future__ import annotations

import hashlib
import json
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import yaml

from sibra.classes import (BandwidthClass, Direction, Kind, LinkAnatomy, class_at_most,
                           make_config, new_flow_id)
from sibra.contracts import Accepted, ContractBook, negotiate_bootstrap
from sibra.errors import TopologyError
from sibra.router import Admitted, EventLog, Router, walk_confirm, walk_request
from sibra.tokens import Flags, MacKey, SibraHeader

FORMAT = 1
CORE, TIER2, LEAF = 0, 1, 2


@dataclass(frozen=True)
class AS:
    id: int
    isd: int
    tier: int

    @property
    def core(self) -> bool:
        return self.tier == CORE

    @property
    def leaf(self) -> bool:
        return self.tier == LEAF


@dataclass(frozen=True)
class Link:
    a: int
    b: int
    capacity: float  # kbps
    delay_ms: float = 5.0

    @property
    def anatomy(self) -> LinkAnatomy:
        return LinkAnatomy(self.capacity)


@dataclass(frozen=True)
class SteadyPath:
    leaf: int
    path: tuple  # leaf first, ISD core last
    index: int  # steady class

    @property
    def kbps(self) -> float:
        return BandwidthClass(Kind.STEADY, self.index).rate

    @property
    def core(self) -> int:
        return self.path[-1]


@dataclass(frozen=True)
class ContractSpec:
    proposer: int
    acceptor: int
    bandwidth: float  # kbps
    toward: Optional[int] = None
    via: Optional[tuple] = None


@dataclass
class Topology:
    ases: dict
    links: list
    steady: dict = field(default_factory=dict)  # leaf -> SteadyPath
    contracts: list = field(default_factory=list)
    roles: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        self._adj = {a: {} for a in self.ases}
        for ln in self.links:
            self._adj[ln.a][ln.b] = ln
            self._adj[ln.b][ln.a] = ln
        self._book = None

    # -- queries ----------------------------------------------------------

    def neighbors(self, a) -> list:
        return sorted(self._adj[a])

    def link(self, a, b) -> Link:
        return self._adj[a][b]

    def isds(self) -> list:
        return sorted({x.isd for x in self.ases.values()})

    def cores(self, isd=None) -> list:
        return sorted(a for a, x in self.ases.items()
                      if x.core and (isd is None or x.isd == isd))

    def leaves(self, isd=None) -> list:
        return sorted(a for a, x in self.ases.items()
                      if x.leaf and (isd is None or x.isd == isd))

    def link_anatomies(self, a) -> dict:
        return {b: ln.anatomy for b, ln in self._adj[a].items()}

    def core_route(self, src_core, dst_core) -> list:
        """Shortest path over core ASes only (ties broken by lowest id)."""
        if src_core == dst_core:
            return [src_core]
        prev = {src_core: None}
        q = deque([src_core])
        while q:
            u = q.popleft()
            for v in self.neighbors(u):
                if v not in prev and self.ases[v].core:
                    prev[v] = u
                    if v == dst_core:
                        out = [v]
                        while prev[out[-1]] is not None:
                            out.append(prev[out[-1]])
                        return out[::-1]
                    q.append(v)
        raise TopologyError(f"no core route {src_core} -> {dst_core}")

    def end_to_end(self, src_leaf, dst_leaf) -> tuple[list, int, int]:
        """AS path src -> dst via steady up-path, core route, steady down-path.

        Returns (path, index where the core route starts, index where the down-path starts).
        """
        up = list(self.steady[src_leaf].path)
        down = list(reversed(self.steady[dst_leaf].path))
        core = self.core_route(up[-1], down[0])
        path = up[:-1] + core + down[1:]
        return path, len(up) - 1, len(up) - 1 + len(core) - 1

    def contract_book(self) -> ContractBook:
        if self._book is None:
            adj = {c: [n for n in self.neighbors(c) if self.ases[n].core] for c in self.cores()}
            book = ContractBook(adj)
            for c in self.contracts:
                res = book.propose(c.proposer, c.acceptor, c.bandwidth, c.toward, c.via)
                if not isinstance(res, Accepted):
                    raise TopologyError(f"contract {c} rejected: {res.reason}")
            self._book = book
        return self._book

    def steady_total(self, core) -> float:
        """Total steady up-path bandwidth sold by ``core`` (sBW_S, also sBW_u*)."""
        return sum(p.kbps for p in self.steady.values() if p.core == core)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "format": FORMAT,
            "name": self.name,
            "ases": [{"id": x.id, "isd": x.isd, "tier": x.tier}
                     for x in sorted(self.ases.values(), key=lambda x: x.id)],
            "links": [{"a": ln.a, "b": ln.b, "capacity_kbps": ln.capacity,
                       "delay_ms": ln.delay_ms} for ln in self.links],
            "steady_paths": [{"leaf": p.leaf, "path": list(p.path), "class": p.index}
                             for p in sorted(self.steady.values(), key=lambda p: p.leaf)],
            "contracts": [{k: v for k, v in (("proposer", c.proposer), ("acceptor", c.acceptor),
                                             ("bandwidth_kbps", c.bandwidth),
                                             ("toward", c.toward),
                                             ("via", list(c.via) if c.via else None))
                           if v is not None} for c in self.contracts],
        }
        if self.roles:
            d["roles"] = self.roles
        return d

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


# -- loading ------------------------------------------------------------------


class LineDict(dict):
    line = None


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    d = LineDict(loader.construct_mapping(node, deep=True))
    d.line = node.start_mark.line + 1
    return d


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def parse_yaml(text: str, path=None):
    try:
        return yaml.load(text, Loader=_Loader)
    except yaml.MarkedYAMLError as e:
        mark = e.problem_mark or e.context_mark
        raise TopologyError(e.problem or str(e), mark.line + 1 if mark else None, path) from None
    except yaml.YAMLError as e:
        raise TopologyError(str(e), None, path) from None


def _need(d, key, kind, path, parent_line=None):
    if not isinstance(d, dict):
        raise TopologyError("expected a mapping", parent_line, path)
    if key not in d:
        raise TopologyError(f"missing field '{key}'", getattr(d, "line", parent_line), path)
    v = d[key]
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if not isinstance(v, kind) or isinstance(v, bool):
        raise TopologyError(f"field '{key}' must be {kind.__name__}",
                            getattr(d, "line", parent_line), path)
    return v


def check_format(doc, path):
    if not isinstance(doc, dict):
        raise TopologyError("document must be a mapping", 1, path)
    if doc.get("format") != FORMAT:
        raise TopologyError(f"unsupported or missing format (expected {FORMAT})",
                            getattr(doc, "line", 1), path)


def loads_topology(text: str, path=None) -> Topology:
    doc = parse_yaml(text, path)
    check_format(doc, path)
    ases = {}
    for d in doc.get("ases") or []:
        a = AS(_need(d, "id", int, path), _need(d, "isd", int, path), _need(d, "tier", int, path))
        if a.id in ases:
            raise TopologyError(f"duplicate AS {a.id}", d.line, path)
        if a.tier not in (CORE, TIER2, LEAF):
            raise TopologyError(f"tier must be 0, 1 or 2", d.line, path)
        ases[a.id] = a
    links = []
    seen = set()
    for d in doc.get("links") or []:
        a, b = _need(d, "a", int, path), _need(d, "b", int, path)
        cap = _need(d, "capacity_kbps", float, path)
        delay = float(d.get("delay_ms", 5.0))
        if a not in ases or b not in ases:
            raise TopologyError(f"link {a}-{b} references an unknown AS", d.line, path)
        if a == b or frozenset((a, b)) in seen:
            raise TopologyError(f"bad or duplicate link {a}-{b}", d.line, path)
        if not cap > 0 or delay < 0:
            raise TopologyError("link capacity must be positive and delay non-negative",
                                d.line, path)
        seen.add(frozenset((a, b)))
        links.append(Link(a, b, cap, delay))
    topo = Topology(ases, links, name=str(doc.get("name", "")))
    for d in doc.get("steady_paths") or []:
        leaf = _need(d, "leaf", int, path)
        hops = _need(d, "path", list, path)
        idx = _need(d, "class", int, path)
        if not 0 <= idx < 12:
            raise TopologyError("steady class must be 0..11", d.line, path)
        if not hops or hops[0] != leaf or hops[-1] not in ases or not ases[hops[-1]].core:
            raise TopologyError("steady path must start at its leaf and end at a core AS",
                                d.line, path)
        for u, v in zip(hops, hops[1:]):
            if v not in topo._adj.get(u, {}):
                raise TopologyError(f"steady path hop {u}-{v} is not a link", d.line, path)
        topo.steady[leaf] = SteadyPath(leaf, tuple(hops), idx)
    for d in doc.get("contracts") or []:
        via = d.get("via")
        topo.contracts.append(ContractSpec(
            _need(d, "proposer", int, path), _need(d, "acceptor", int, path),
            _need(d, "bandwidth_kbps", float, path), d.get("toward"),
            tuple(via) if via else None))
    missing = [a for a in topo.leaves() if a not in topo.steady]
    if missing:
        raise TopologyError(f"leaf AS {missing[0]} has no steady path", doc.line, path)
    roles = doc.get("roles") or {}
    topo.roles = {k: (list(v) if isinstance(v, list) else v) for k, v in roles.items()}
    try:
        topo.contract_book()
    except TopologyError as e:
        raise TopologyError(str(e), None, path) from None
    return topo


def load_topology(path) -> Topology:
    with open(path) as f:
        return loads_topology(f.read(), str(path))


# -- steady path establishment -------------------------------------------------


def as_key(seed: int, as_id: int) -> MacKey:
    return MacKey(hashlib.sha256(f"sibra-key:{seed}:{as_id}".encode()).digest()[:16])


def build_routers(topo: Topology, seed: int = 0, events: Optional[EventLog] = None,
                  config=None) -> dict:
    events = events if events is not None else EventLog(enabled=False)
    return {a: Router(a, as_key(seed, a), topo.link_anatomies(a), config, events)
            for a in sorted(topo.ases)}


def establish_steady(topo: Topology, wants: list, rng: random.Random, routers=None) -> dict:
    """Admit steady paths through real routers, in the given order.

    ``wants`` holds (leaf, path, class index). A denied leaf retries once with
    the smallest offer on its path, if that offer is at least the bottom class.
    Returns leaf -> SteadyPath for the admitted ones.
    """
    routers = routers or build_routers(topo, rng.getrandbits(32))
    out = {}
    now = 0.0
    for leaf, path, idx in wants:
        cls = BandwidthClass(Kind.STEADY, idx)
        for _attempt in range(2):
            h = SibraHeader(new_flow_id(rng), make_config(0, cls, direction=Direction.BIDIRECTIONAL,
                                                          rev_class=cls))
            res = walk_request(routers, list(path), h, now)
            if all(isinstance(r, Admitted) for r in res):
                walk_confirm(routers, list(path), h, now + 1)
                out[leaf] = SteadyPath(leaf, tuple(path), cls.index)
                break
            now += 1000.0
            for r in routers.values():
                r.sweep_pending(now)
            offer = min(kbps for _, kbps in h.offers)
            c = class_at_most(Kind.STEADY, offer)
            if c is None:
                break
            cls = c
    return out


def _bootstrap_contracts(topo: Topology, extend_frac: float = 0.5) -> list:
    cores = topo.cores()
    adj = {c: [n for n in topo.neighbors(c) if topo.ases[n].core] for c in cores}
    observed = {}
    for c in cores:
        for n in adj[c]:
            observed[(n, c)] = topo.link(n, c).capacity
    book = negotiate_bootstrap(adj, observed, extend_frac)
    specs = []
    for cid in sorted(book.contracts):
        k = book.contracts[cid]
        via = None
        toward = None
        if k.parent_row is not None:
            toward = k.destination
            via = book._rows[k.parent_row][1].path
        specs.append(ContractSpec(k.proposer, k.acceptor, k.bandwidth, toward, via))
    return specs


# -- generators -----------------------------------------------------------------


def generate_topology(n_isd: int = 2, ases: int = 200, seed: int = 0, cores_per_isd: int = 2,
                      tier2_per_core: int = 8, scale: float = 1e-3) -> Topology:
    """Tiered multi-ISD topology with steady up-paths established by admission.

    Link sizes follow the evaluation setup scaled by ``scale``: 40 Gbps
    between ISD cores, 10 Gbps between cores of one ISD, 2.4 Gbps core to
    tier-2, 640 Mbps everywhere else.
    """
    if n_isd < 1:
        raise TopologyError("need at least one ISD")
    per = ases // n_isd
    need = cores_per_isd * (1 + tier2_per_core) + 1
    if per < need:
        raise TopologyError(f"{ases} ASes is too few for {n_isd} ISDs of this shape")
    rng = random.Random(seed)
    kbps = lambda gbps: gbps * 1e6 * scale
    all_ases, links = {}, []
    nid = 1
    layout = {}
    for isd in range(1, n_isd + 1):
        cores = list(range(nid, nid + cores_per_isd))
        nid += cores_per_isd
        t2 = {}
        for c in cores:
            t2[c] = list(range(nid, nid + tier2_per_core))
            nid += tier2_per_core
        n_leaves = per - cores_per_isd * (1 + tier2_per_core)
        leaves = list(range(nid, nid + n_leaves))
        nid += n_leaves
        for c in cores:
            all_ases[c] = AS(c, isd, CORE)
            for t in t2[c]:
                all_ases[t] = AS(t, isd, TIER2)
        for lf in leaves:
            all_ases[lf] = AS(lf, isd, LEAF)
        for i, c in enumerate(cores):
            for d in cores[i + 1:]:
                links.append(Link(c, d, kbps(10), 2.0))
            for t in t2[c]:
                links.append(Link(c, t, kbps(2.4), 5.0))
        flat_t2 = [t for c in cores for t in t2[c]]
        rng.shuffle(flat_t2)
        parent = {}
        for i, lf in enumerate(leaves):
            # balanced attachment so every tier-2 uplink can carry its leaves
            p = flat_t2[i % len(flat_t2)]
            parent[lf] = p
            links.append(Link(p, lf, kbps(0.64), 5.0))
        layout[isd] = (cores, t2, leaves, parent)
    for i in range(1, n_isd + 1):
        for j in range(i + 1, n_isd + 1):
            links.append(Link(layout[i][0][0], layout[j][0][0], kbps(40), 20.0))
    topo = Topology(all_ases, links, name=f"tiered-{n_isd}x{ases}-s{seed}")
    owner = {t: c for isd in layout for c, ts in layout[isd][1].items() for t in ts}
    wants = []
    for isd in layout:
        kids = {}
        for lf, t in layout[isd][3].items():
            kids[t] = kids.get(t, 0) + 1
        for lf in layout[isd][2]:
            t = layout[isd][3][lf]
            budget = min(topo.link(t, lf).anatomy.steady,
                         topo.link(t, owner[t]).anatomy.steady / kids[t])
            c = class_at_most(Kind.STEADY, budget)
            if c is None:
                raise TopologyError(f"tier-2 AS {t} has too many leaves for a steady path each")
            wants.append((lf, (lf, t, owner[t]), c.index))
    rng.shuffle(wants)
    topo.steady = establish_steady(topo, wants, rng)
    missing = set(topo.leaves()) - set(topo.steady)
    if missing:
        raise TopologyError(f"{len(missing)} leaves could not establish a steady path")
    topo.contracts = _bootstrap_contracts(topo)
    topo._book = None
    return topo


def generate_dumbbell(attacker_leaves: int = 10, seed: int = 0) -> Topology:
    """Two cores joined by one 10 Mbps link; legit S and D on 4 Mbps access
    links; ``attacker_leaves`` attacker ASes on each side on 10 Mbps links."""
    L, R, S, D = 1, 2, 3, 4
    ases = {L: AS(L, 1, CORE), R: AS(R, 1, CORE), S: AS(S, 1, LEAF), D: AS(D, 1, LEAF)}
    links = [Link(L, R, 10_000.0, 5.0), Link(S, L, 4_000.0, 5.0), Link(D, R, 4_000.0, 5.0)]
    left = list(range(10, 10 + attacker_leaves))
    right = list(range(100, 100 + attacker_leaves))
    for a in left:
        ases[a] = AS(a, 1, LEAF)
        links.append(Link(a, L, 10_000.0, 5.0))
    for a in right:
        ases[a] = AS(a, 1, LEAF)
        links.append(Link(a, R, 10_000.0, 5.0))
    topo = Topology(ases, links, name=f"dumbbell-{attacker_leaves}")
    rng = random.Random(seed)
    wants = [(S, (S, L), 7), (D, (D, R), 7)]
    wants += [(a, (a, L), 0) for a in left] + [(a, (a, R), 0) for a in right]
    topo.steady = establish_steady(topo, wants, rng)
    topo.contracts = [ContractSpec(R, L, 0.85 * 10_000.0), ContractSpec(L, R, 0.85 * 10_000.0)]
    topo.roles = {"source": S, "dest": D, "left_core": L, "right_core": R,
                  "attackers_left": left, "attackers_right": right}
    return topo


def generate_star(attacker_cores: int = 3, seed: int = 0) -> Topology:
    """Shared down-path setup: a benign core and ``attacker_cores`` attacker
    cores all feed destination core DC, which serves destination D.

    D's access link is sized so its steady down-path (top steady class) takes
    the whole steady partition; its ephemeral partition then equals
    beta times the down-path.
    """
    DC, D, BC, B = 1, 2, 3, 4
    top = BandwidthClass(Kind.STEADY, 11).rate
    ases = {DC: AS(DC, 1, CORE), D: AS(D, 1, LEAF), BC: AS(BC, 2, CORE), B: AS(B, 2, LEAF)}
    links = [Link(DC, D, top / 0.05, 5.0), Link(BC, DC, 1e6, 10.0), Link(B, BC, 10_000.0, 5.0)]
    acs = list(range(10, 10 + attacker_cores))
    for i, a in enumerate(acs):
        ases[a] = AS(a, 3 + i, CORE)
        links.append(Link(a, DC, 1e6, 10.0))
    topo = Topology(ases, links, name=f"star-{attacker_cores}")
    rng = random.Random(seed)
    topo.steady = establish_steady(topo, [(D, (D, DC), 11), (B, (B, BC), 9)], rng)
    topo.contracts = [ContractSpec(DC, c, 0.85 * 1e6) for c in [BC] + acs]
    topo.roles = {"dest": D, "dest_core": DC, "benign_core": BC, "benign_source": B,
                  "attacker_cores": acs}
    return topo


def generate_line(n: int = 11, capacity: float = 1e6, delay_ms: float = 5.0) -> Topology:
    """``n`` core-tier ASes in a chain (used for per-hop loss experiments)."""
    ases = {i: AS(i, 1, CORE) for i in range(1, n + 1)}
    links = [Link(i, i + 1, capacity, delay_ms) for i in range(1, n)]
    topo = Topology(ases, links, name=f"line-{n}")
    topo.roles = {"chain": list(range(1, n + 1))}
    return topo


GENERATORS = {
    "tiered": generate_topology,
    "dumbbell": generate_dumbbell,
    "star": generate_star,
    "line": generate_line,
}
