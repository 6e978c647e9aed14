"""Fair-share formulas for ephemeral and steady bandwidth.

Every function is degree-1 homogeneous in the bandwidth inputs and uses only
``+ - * /`` and ``min``, so passing :class:`fractions.Fraction` values gives
exact results (used by the sum-to-total tests).

Symbols (all kbps unless noted):

* ``sbw_u``     steady up-path of the requesting source
* ``sbw_s``     total steady bandwidth sold by the source's core AS
* ``sbw_ustar`` total steady up-path bandwidth at that core (same aggregate
                as ``sbw_s`` by default)
* ``sbw_c``     control (steady) bandwidth of the core path
* ``sbw_d``     steady down-path of the destination
* ``c_sd``      core contract from the source core toward the destination core
* ``c_stard``   sum of all core contracts into the destination core
* ``beta``      ephemeral/steady ratio of the link anatomy (16 by default)
* ``rho``       preference for local traffic on down-paths, in (0, 1)
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from sibra.classes import LinkAnatomy
from sibra.errors import ShareDomainError


@dataclass(frozen=True)
class ShareInputs:
    sbw_u: float
    beta: float = 16.0
    sbw_s: Optional[float] = None
    sbw_ustar: Optional[float] = None
    sbw_c: float = 0.0
    sbw_d: float = 0.0
    c_sd: float = 0.0
    c_stard: float = 0.0
    rho: float = 0.5

    def __post_init__(self):
        if self.sbw_s is None:
            object.__setattr__(self, "sbw_s", self.sbw_u)
        if self.sbw_ustar is None:
            object.__setattr__(self, "sbw_ustar", self.sbw_s)
        for name in ("sbw_u", "sbw_s", "sbw_ustar", "sbw_c", "sbw_d", "c_sd",
                     "c_stard", "beta"):
            if getattr(self, name) < 0:
                raise ShareDomainError(f"{name} must be non-negative")
        if self.sbw_u > self.sbw_s or self.sbw_u > self.sbw_ustar:
            raise ShareDomainError("an up-path cannot exceed its core's steady total")
        if self.c_sd > self.c_stard:
            raise ShareDomainError("c_sd cannot exceed the total contracts into D")
        if not 0 < self.rho < 1:
            raise ShareDomainError("rho must lie strictly between 0 and 1")

    @classmethod
    def for_anatomy(cls, anatomy: LinkAnatomy, **kw) -> "ShareInputs":
        return cls(beta=anatomy.beta, **kw)


def _ratio(num, den, what):
    if den == 0:
        raise ShareDomainError(f"{what} is zero")
    return num / den


def eph_source_share(x: ShareInputs):
    """Ephemeral bandwidth the up-path alone can support."""
    return x.beta * x.sbw_u


def eph_core_share(x: ShareInputs):
    """Share of the core path, weighted by the up-path's part of the core's steady total."""
    return _ratio(x.sbw_u, x.sbw_s, "sbw_s") * x.beta * x.sbw_c


def eph_dest_share(x: ShareInputs):
    """Share of the destination down-path, weighted by contract and up-path."""
    w_core = _ratio(x.c_sd, x.c_stard, "c_stard")
    return w_core * _ratio(x.sbw_u, x.sbw_s, "sbw_s") * x.beta * x.sbw_d


def eph_path_share(x: ShareInputs):
    return min(eph_source_share(x), eph_core_share(x), eph_dest_share(x))


def steady_core_share(x: ShareInputs):
    """Steady bandwidth on the core path (no beta weighting)."""
    return _ratio(x.sbw_u, x.sbw_ustar, "sbw_ustar") * x.sbw_c


def steady_dest_share(x: ShareInputs):
    w_core = _ratio(x.c_sd, x.c_stard, "c_stard")
    return w_core * _ratio(x.sbw_u, x.sbw_ustar, "sbw_ustar") * x.sbw_d


def steady_local_share(x: ShareInputs):
    """Down-path steady share for a source in the destination's own ISD."""
    return _ratio(x.sbw_u, x.sbw_ustar, "sbw_ustar") * x.rho * x.sbw_d


def steady_external_share(x: ShareInputs):
    """Down-path steady share for a source from another ISD."""
    return (1 - x.rho) * steady_dest_share(x)


def leaf_fair_share(total_capacity: float, leaf_count: int,
                    anatomy: Optional[LinkAnatomy] = None) -> tuple[float, float]:
    """Equal split of aggregate core capacity (bps) across ``leaf_count`` leaves.

    Returns ``(total, ephemeral)`` per leaf in bps.
    """
    if leaf_count <= 0:
        raise ShareDomainError("leaf_count must be positive")
    if total_capacity < 0:
        raise ShareDomainError("capacity must be non-negative")
    frac = 0.80 if anatomy is None else anatomy.ephemeral_frac
    total = total_capacity / leaf_count
    return total, frac * total
