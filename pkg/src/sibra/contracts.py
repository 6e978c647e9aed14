"""Core contracts between neighboring core ASes and guaranteed-bandwidth tables.

Contracts are proposed by the receiving side: ``proposer`` offers to absorb
``bandwidth`` from ``acceptor``. A proposer may also forward a share of one
of its own core paths (an *extension*), in which case the acceptor gains a
row toward the same destination one hop longer.

Bandwidth values are in bps, like the quantities they model.
"""
from __future__ import annotations

import itertools
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Optional

from sibra.errors import ContractError

BOOTSTRAP_FRAC = 0.85
BOOTSTRAP_STEADY = 0.05
BOOTSTRAP_EPHEMERAL = 0.80


@dataclass(frozen=True)
class Proposal:
    total: float
    steady: float
    ephemeral: float


def bootstrap_proposal(observed: float) -> Optional[Proposal]:
    """Initial contract size from observed aggregate volume, or None if nothing was seen."""
    if observed < 0:
        raise ContractError("observed volume must be non-negative")
    if observed == 0:
        return None
    return Proposal(BOOTSTRAP_FRAC * observed, BOOTSTRAP_STEADY * observed,
                    BOOTSTRAP_EPHEMERAL * observed)


@dataclass(frozen=True)
class CoreContract:
    cid: int
    proposer: int
    acceptor: int
    bandwidth: float
    destination: int
    uptime: float = 0.9999  # recorded, not enforced
    term: Optional[float] = None
    parent_row: Optional[int] = None


@dataclass
class Row:
    rid: int
    destination: int
    path: tuple  # next hops, ending at the destination
    bandwidth: float
    contract: int
    extended: float = 0.0

    @property
    def own_use(self) -> float:
        return self.bandwidth - self.extended


@dataclass(frozen=True)
class Accepted:
    contract: CoreContract
    row: Row


@dataclass(frozen=True)
class Rejected:
    reason: str


class ContractBook:
    """All contracts among a set of core ASes plus each AS's guaranteed-bandwidth table."""

    def __init__(self, adjacency: dict):
        self.adj = {a: set(ns) for a, ns in adjacency.items()}
        self.contracts: dict[int, CoreContract] = {}
        self.tables: dict = defaultdict(list)  # as -> [Row]
        self._rows: dict[int, tuple] = {}  # rid -> (as, Row)
        self._ids = itertools.count(1)
        self.messages = 0

    def adjacent(self, a, b) -> bool:
        return b in self.adj.get(a, ())

    def propose(self, proposer, acceptor, bandwidth: float, toward=None,
                via: Optional[tuple] = None, uptime: float = 0.9999):
        """One-link proposal, decided from local knowledge only.

        ``toward`` is the destination core AS; None means the proposer itself.
        For an extension, ``via`` picks which of the proposer's rows to extend
        (its largest remaining one by default).
        """
        self.messages += 1
        if proposer == acceptor:
            return Rejected("self")
        if not self.adjacent(proposer, acceptor):
            return Rejected("not_adjacent")
        if not bandwidth > 0:
            return Rejected("non_positive")
        dest = proposer if toward is None else toward
        parent = None
        path = (proposer,)
        if dest != proposer:
            cands = [r for r in self.tables[proposer] if r.destination == dest
                     and (via is None or r.path == tuple(via))]
            if not cands:
                return Rejected("no_upstream_row")
            parent = max(cands, key=lambda r: (r.own_use, -r.rid))
            if acceptor in parent.path:
                return Rejected("loop")
            if bandwidth > parent.own_use * (1 + 1e-12):
                return Rejected("exceeds_upstream")
            path = (proposer,) + parent.path
        if acceptor == dest:
            return Rejected("loop")
        c = CoreContract(next(self._ids), proposer, acceptor, float(bandwidth), dest, uptime,
                         parent_row=None if parent is None else parent.rid)
        self.contracts[c.cid] = c
        if parent is not None:
            parent.extended += c.bandwidth
        row = Row(next(self._ids), dest, path, c.bandwidth, c.cid)
        self.tables[acceptor].append(row)
        self._rows[row.rid] = (acceptor, row)
        return Accepted(c, row)

    def lookup_core_paths(self, at, destination) -> list:
        return [r for r in self.tables.get(at, []) if r.destination == destination]

    def expire(self, cid: int) -> int:
        """Remove a contract, its row, and every row extended from it. Returns rows removed."""
        c = self.contracts.pop(cid, None)
        if c is None:
            return 0
        if c.parent_row is not None and c.parent_row in self._rows:
            self._rows[c.parent_row][1].extended -= c.bandwidth
        removed = 0
        for rid, (owner, row) in list(self._rows.items()):
            if row.contract == cid:
                removed += self._drop_row(owner, row)
        return removed

    def _drop_row(self, owner, row) -> int:
        if row.rid not in self._rows:
            return 0
        del self._rows[row.rid]
        self.tables[owner].remove(row)
        n = 1
        for cid in [c.cid for c in self.contracts.values() if c.parent_row == row.rid]:
            n += self.expire(cid)
        return n

    def total_into(self, destination) -> float:
        """Sum of accepted contracts the destination core absorbs directly."""
        return sum(c.bandwidth for c in self.contracts.values()
                   if c.proposer == destination and c.destination == destination)

    def toward(self, at, destination) -> float:
        """Guaranteed bandwidth from ``at`` to ``destination`` over all its core paths."""
        return sum(r.bandwidth for r in self.lookup_core_paths(at, destination))

    def check_chain_bounds(self) -> None:
        """Every row fits inside every contract along its chain."""
        for owner, row in self._rows.values():
            c = self.contracts[row.contract]
            cap = c.bandwidth
            pr = c.parent_row
            while pr is not None:
                if pr not in self._rows:
                    raise ContractError(f"row {row.rid} has a dangling parent")
                parent = self._rows[pr][1]
                cap = min(cap, parent.bandwidth)
                pr = self.contracts[parent.contract].parent_row
            if row.bandwidth > cap * (1 + 1e-12):
                raise ContractError(f"row {row.rid} exceeds its contract chain")
            if row.extended > row.bandwidth * (1 + 1e-12):
                raise ContractError(f"row {row.rid} extends more than it holds")


def negotiate_bootstrap(adjacency: dict, observed: dict, extend_frac: float = 0.5,
                        max_depth: Optional[int] = None) -> ContractBook:
    """Bootstrap all contracts among core ASes.

    ``observed[(u, v)]`` is the aggregate volume (bps) that ``v`` has been
    receiving from neighbor ``u``. For every destination D, neighbors of D get
    direct contracts of 85% of that volume; then, breadth-first, each AS
    reached at depth k extends ``extend_frac`` of its largest row toward D to
    its neighbors at depth k+1, split in proportion to the volume it receives
    from them. Every edge carries at most one proposal per destination.
    """
    book = ContractBook(adjacency)
    for dest in sorted(adjacency):
        depth = {dest: 0}
        frontier = deque()
        for n in sorted(adjacency[dest]):
            p = bootstrap_proposal(observed.get((n, dest), 0.0))
            if p is not None and isinstance(book.propose(dest, n, p.total), Accepted):
                depth[n] = 1
                frontier.append(n)
        while frontier:
            v = frontier.popleft()
            k = depth[v]
            if max_depth is not None and k >= max_depth:
                continue
            nxt = [w for w in sorted(adjacency[v]) if depth.get(w, k + 1) == k + 1]
            rows = book.lookup_core_paths(v, dest)
            if not nxt or not rows:
                continue
            weights = {w: observed.get((w, v), 0.0) for w in nxt}
            total = sum(weights.values())
            if total <= 0:
                continue
            best = max(rows, key=lambda r: (r.own_use, -r.rid))
            budget = extend_frac * best.own_use
            for w in nxt:
                amt = budget * weights[w] / total
                if amt <= 0:
                    continue
                if isinstance(book.propose(v, w, amt, toward=dest, via=best.path), Accepted):
                    if w not in depth:
                        depth[w] = k + 1
                        frontier.append(w)
    return book
