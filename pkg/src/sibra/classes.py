"""Shared vocabulary: flow ids, SIBRA time, bandwidth classes and link anatomy.

All rates are kbps floats. Class rates are irrational (powers of sqrt 2), so
comparisons go through :func:`rate_le` with a 1e-9 relative tolerance.
"""
from __future__ import annotations

import enum
import math
import os
import random
from dataclasses import dataclass, field
from typing import Optional

from sibra.errors import ClassRangeError, TooLarge

FLOW_ID_LEN = 16
SIBRA_SECOND = 4.0  # wall seconds per tick
TICK_MS = 4000
EXP_MODULUS = 1 << 16

STEADY_CLASSES = 12
EPHEMERAL_CLASSES = 20
STEADY_BASE_KBPS = 16.0
EPHEMERAL_BASE_KBPS = 256.0

STEADY_LIFETIME = 45  # ticks
EPHEMERAL_LIFETIME = 4  # ticks, also the hard maximum

REL_TOL = 1e-9

FlowId = bytes


def new_flow_id(rng: Optional[random.Random] = None) -> FlowId:
    """Return a uniformly random 128-bit flow id (``os.urandom`` unless seeded)."""
    if rng is None:
        return os.urandom(FLOW_ID_LEN)
    return rng.getrandbits(8 * FLOW_ID_LEN).to_bytes(FLOW_ID_LEN, "big")


def quantize_time(wall: float) -> int:
    """Map wall time in seconds (from scenario start) to SIBRA seconds."""
    if wall < 0:
        raise ValueError("wall time must be non-negative")
    return int(math.floor(wall / SIBRA_SECOND))


def tick_of_ms(ms: float) -> int:
    return int(ms // TICK_MS)


def exp16(tick: int) -> int:
    """Wire encoding of an absolute tick (mod 2**16)."""
    return tick % EXP_MODULUS


def ticks_until(exp: int, now_tick: int) -> int:
    """Signed distance from ``now_tick`` to a 16-bit expiration value.

    Serial-number arithmetic: valid while lifetimes stay far below 2**15 ticks.
    """
    d = (exp - now_tick) % EXP_MODULUS
    return d - EXP_MODULUS if d >= EXP_MODULUS // 2 else d


def is_expired(exp: int, now_tick: int) -> bool:
    """True once wall time has reached the expiration instant ``exp * 4 s``.

    A reservation made at tick s with lifetime L is therefore usable during
    ticks s..s+L-1, exactly L SIBRA seconds.
    """
    return ticks_until(exp, now_tick) <= 0


class Kind(enum.IntEnum):
    STEADY = 0
    EPHEMERAL = 1


class Direction(enum.IntEnum):
    FORWARD = 0
    REVERSE = 1
    BIDIRECTIONAL = 2


def _ladder(base: float, n: int) -> tuple[float, ...]:
    return tuple(base * math.sqrt(2.0 ** i) for i in range(n))


_RATES = {
    Kind.STEADY: _ladder(STEADY_BASE_KBPS, STEADY_CLASSES),
    Kind.EPHEMERAL: _ladder(EPHEMERAL_BASE_KBPS, EPHEMERAL_CLASSES),
}


def ladder_size(kind: Kind) -> int:
    return len(_RATES[Kind(kind)])


def steady_class_rate(index: int) -> float:
    """Rate of steady class ``index``: 16 * sqrt(2**index) kbps."""
    if not 0 <= index < STEADY_CLASSES:
        raise ClassRangeError(f"steady class index {index} not in 0..{STEADY_CLASSES - 1}")
    return _RATES[Kind.STEADY][index]


def ephemeral_class_rate(index: int) -> float:
    """Rate of ephemeral class ``index``: 256 * sqrt(2**index) kbps."""
    if not 0 <= index < EPHEMERAL_CLASSES:
        raise ClassRangeError(
            f"ephemeral class index {index} not in 0..{EPHEMERAL_CLASSES - 1}")
    return _RATES[Kind.EPHEMERAL][index]


def rate_le(a: float, b: float) -> bool:
    """``a <= b`` up to the relative tolerance used for class rates."""
    return a <= b + REL_TOL * max(abs(a), abs(b))


@dataclass(frozen=True, order=True)
class BandwidthClass:
    kind: Kind
    index: int

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not 0 <= self.index < ladder_size(self.kind):
            raise ClassRangeError(
                f"{self.kind.name.lower()} class index {self.index} out of range")

    @property
    def rate(self) -> float:
        return _RATES[self.kind][self.index]

    def __str__(self):
        return f"{self.kind.name[0]}{self.index}"


def class_for_rate(kind: Kind, requested: float) -> BandwidthClass:
    """Smallest class of ``kind`` whose rate covers ``requested`` kbps."""
    if not requested > 0:
        raise ValueError("requested rate must be positive")
    for i, r in enumerate(_RATES[Kind(kind)]):
        if rate_le(requested, r):
            return BandwidthClass(kind, i)
    raise TooLarge(f"{requested} kbps exceeds the top {Kind(kind).name.lower()} class")


def class_at_most(kind: Kind, budget: float) -> Optional[BandwidthClass]:
    """Largest class whose rate fits in ``budget`` kbps, or None."""
    best = None
    for i, r in enumerate(_RATES[Kind(kind)]):
        if rate_le(r, budget):
            best = i
        else:
            break
    return None if best is None else BandwidthClass(kind, best)


COMPARABLE_WINDOW = 2


def comparable_classes(c: BandwidthClass) -> frozenset[BandwidthClass]:
    """Classes within +-2 indices of ``c`` (a factor-2 band), clipped to the ladder."""
    n = ladder_size(c.kind)
    lo = max(0, c.index - COMPARABLE_WINDOW)
    hi = min(n - 1, c.index + COMPARABLE_WINDOW)
    return frozenset(BandwidthClass(c.kind, i) for i in range(lo, hi + 1))


@dataclass(frozen=True)
class LinkAnatomy:
    """Split of one link direction into ephemeral, steady and best-effort parts.

    ``capacity`` is in kbps like every other rate in the package.
    """
    capacity: float
    ephemeral_frac: float = 0.80
    steady_frac: float = 0.05
    besteffort_frac: float = 0.15

    def __post_init__(self):
        if not self.capacity > 0:
            raise ValueError("link capacity must be positive")
        fr = (self.ephemeral_frac, self.steady_frac, self.besteffort_frac)
        if any(not 0.0 <= f <= 1.0 for f in fr):
            raise ValueError("anatomy fractions must lie in [0, 1]")
        if abs(math.fsum(fr) - 1.0) > 1e-12:
            raise ValueError(f"anatomy fractions sum to {math.fsum(fr)}, expected 1")

    @property
    def beta(self) -> float:
        return self.ephemeral_frac / self.steady_frac

    @property
    def steady(self) -> float:
        return self.capacity * self.steady_frac

    @property
    def ephemeral(self) -> float:
        return self.capacity * self.ephemeral_frac

    @property
    def besteffort(self) -> float:
        return self.capacity * self.besteffort_frac

    def partition(self, kind: Kind) -> float:
        return self.ephemeral if kind == Kind.EPHEMERAL else self.steady

    def with_capacity(self, capacity: float) -> "LinkAnatomy":
        return LinkAnatomy(capacity, self.ephemeral_frac, self.steady_frac,
                           self.besteffort_frac)


@dataclass(frozen=True)
class ReservationConfig:
    """Request parameters chosen by the initiator.

    ``expiration`` is the 16-bit wire value (absolute tick mod 2**16).
    ``rev_class`` is carried even for forward-only reservations so the
    header round-trips bit-exactly; it shares ``fwd_class.kind``.
    """
    expiration: int
    fwd_class: BandwidthClass
    direction: Direction = Direction.FORWARD
    rev_class: Optional[BandwidthClass] = None
    reservation_index: int = 0

    def __post_init__(self):
        if not 0 <= self.expiration < EXP_MODULUS:
            raise ValueError("expiration must fit 16 bits")
        if not 0 <= self.reservation_index < 16:
            raise ValueError("reservation index must fit 4 bits")
        object.__setattr__(self, "direction", Direction(self.direction))
        if self.rev_class is None:
            object.__setattr__(self, "rev_class", BandwidthClass(self.fwd_class.kind, 0))
        elif self.rev_class.kind != self.fwd_class.kind:
            raise ValueError("forward and reverse classes must share a kind")

    @property
    def kind(self) -> Kind:
        return self.fwd_class.kind


def make_config(now_tick: int, bw_class: BandwidthClass, *, lifetime: Optional[int] = None,
                direction: Direction = Direction.FORWARD,
                rev_class: Optional[BandwidthClass] = None, index: int = 0) -> ReservationConfig:
    """Build a config starting now with the default lifetime for the class kind."""
    if lifetime is None:
        lifetime = EPHEMERAL_LIFETIME if bw_class.kind == Kind.EPHEMERAL else STEADY_LIFETIME
    if bw_class.kind == Kind.EPHEMERAL and lifetime > EPHEMERAL_LIFETIME:
        raise ValueError("ephemeral lifetime is capped at 4 SIBRA seconds")
    return ReservationConfig(exp16(now_tick + lifetime), bw_class, direction, rev_class, index)


@dataclass
class SibraConfig:
    """System-wide knobs with no single canonical value."""
    max_steady_paths: int = 5
    anatomy: LinkAnatomy = field(default_factory=lambda: LinkAnatomy(1.0))
