"""Reservation tokens (onion-chained CBC-MACs) and the SIBRA header codec.

Token layout: ingress u16 | egress u16 | mac 4 bytes, 8 bytes total.

Header layout (big-endian)::

    0..15   flow id
    16..17  expiration tick mod 2**16
    18      forward class index << 3 (low 3 bits zero)
    19      direction << 6 | reservation index << 2 (low 2 bits zero)
    20      flags
    21      hops cursor
    22      reverse class index << 3
    23      token count
    24..    tokens, 8 bytes each
    if FAILED: decline AS u32, offer count u8, offers (AS u32, kbps f64)
"""
from __future__ import annotations

import enum
import hmac
import struct
from dataclasses import dataclass, field
from typing import Optional

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from sibra.classes import (FLOW_ID_LEN, BandwidthClass, Direction, Kind,
                           ReservationConfig)
from sibra.errors import ClassRangeError, MalformedHeader

MAC_LEN = 4
TOKEN_LEN = 8
PREFIX_LEN = 24
BLOCK = 16
MAX_TOKENS = 255
_EMPTY_PREV = bytes(TOKEN_LEN)


class Flags(enum.IntFlag):
    NONE = 0
    EPHEMERAL = 0x01
    FAILED = 0x02
    CONFIRM = 0x04
    KEEPALIVE = 0x08
    DATA = 0x10
    RENEWAL = 0x20


_KNOWN_FLAGS = 0x3F


@dataclass(frozen=True)
class RequestInfo:
    """The (class, expiration, flow id) triple every on-path AS authenticates."""
    bw_class: BandwidthClass
    exp_time: int
    flow_id: bytes

    def pack(self) -> bytes:
        cls = (self.bw_class.kind << 7) | self.bw_class.index
        return struct.pack("!BH", cls, self.exp_time & 0xFFFF) + self.flow_id


REQUEST_LEN = 3 + FLOW_ID_LEN


@dataclass(frozen=True)
class ReservationToken:
    ingress: int
    egress: int
    mac: bytes

    def __post_init__(self):
        if not (0 <= self.ingress <= 0xFFFF and 0 <= self.egress <= 0xFFFF):
            raise ValueError("interface ids are 16 bits")
        if len(self.mac) != MAC_LEN:
            raise ValueError("mac must be 4 bytes")

    def pack(self) -> bytes:
        return struct.pack("!HH", self.ingress, self.egress) + self.mac

    @classmethod
    def unpack(cls, raw: bytes) -> "ReservationToken":
        ingress, egress = struct.unpack_from("!HH", raw)
        return cls(ingress, egress, bytes(raw[4:8]))


class MacKey:
    """Per-AS AES-128 key, expanded once; computes CBC-MAC with a zero IV.

    The MAC input always has a fixed length (two blocks), which is what keeps
    plain CBC-MAC sound here.
    """

    def __init__(self, key: bytes):
        if len(key) != 16:
            raise ValueError("AS keys are 128 bits")
        self._raw = bytes(key)
        self._ecb = Cipher(algorithms.AES(self._raw), modes.ECB()).encryptor()

    def cbc_mac(self, data: bytes) -> bytes:
        if len(data) % BLOCK:
            raise ValueError("CBC-MAC input must be block aligned")
        state = 0
        for off in range(0, len(data), BLOCK):
            block = state ^ int.from_bytes(data[off:off + BLOCK], "big")
            state = int.from_bytes(self._ecb.update(block.to_bytes(BLOCK, "big")), "big")
        return state.to_bytes(BLOCK, "big")

    def __repr__(self):
        return "MacKey(<hidden>)"


def mac_input(ingress: int, egress: int, req: RequestInfo,
              prev: Optional[ReservationToken]) -> bytes:
    # leading byte tells an absent upstream token apart from an all-zero one
    head = struct.pack("!BHH", 0 if prev is None else 1, ingress, egress)
    tail = _EMPTY_PREV if prev is None else prev.pack()
    return head + req.pack() + tail


def issue_token(key: MacKey, ingress: int, egress: int, req: RequestInfo,
                prev: Optional[ReservationToken] = None) -> ReservationToken:
    tag = key.cbc_mac(mac_input(ingress, egress, req, prev))[:MAC_LEN]
    return ReservationToken(ingress, egress, tag)


def verify_token(key: MacKey, token: ReservationToken, req: RequestInfo,
                 prev: Optional[ReservationToken] = None) -> bool:
    expect = key.cbc_mac(mac_input(token.ingress, token.egress, req, prev))[:MAC_LEN]
    return hmac.compare_digest(expect, token.mac)


@dataclass
class SibraHeader:
    flow_id: bytes
    config: ReservationConfig
    flags: Flags = Flags.NONE
    hops: int = 0
    tokens: list = field(default_factory=list)
    offers: list = field(default_factory=list)  # (as id, kbps)
    decline_as: Optional[int] = None

    @property
    def failed(self) -> bool:
        return bool(self.flags & Flags.FAILED)

    def request_info(self) -> RequestInfo:
        return RequestInfo(self.config.fwd_class, self.config.expiration, self.flow_id)

    def prev_token(self, pos: Optional[int] = None) -> Optional[ReservationToken]:
        """Token of the AS before position ``pos`` (defaults to the cursor)."""
        pos = self.hops if pos is None else pos
        return self.tokens[pos - 1] if pos > 0 else None

    def copy(self) -> "SibraHeader":
        return SibraHeader(self.flow_id, self.config, self.flags, self.hops,
                           list(self.tokens), list(self.offers), self.decline_as)


def encode_header(h: SibraHeader) -> bytes:
    cfg = h.config
    if len(h.flow_id) != FLOW_ID_LEN:
        raise MalformedHeader("flow id must be 16 bytes")
    if len(h.tokens) > MAX_TOKENS:
        raise MalformedHeader("too many tokens")
    if not 0 <= h.hops <= len(h.tokens):
        raise MalformedHeader("hops cursor beyond token list")
    flags = Flags(h.flags)
    if (cfg.kind == Kind.EPHEMERAL) != bool(flags & Flags.EPHEMERAL):
        raise MalformedHeader("EPHEMERAL flag disagrees with class kind")
    if (h.offers or h.decline_as is not None) and not flags & Flags.FAILED:
        raise MalformedHeader("offers present on a successful header")
    out = bytearray(h.flow_id)
    out += struct.pack(
        "!HBBBBBB", cfg.expiration, cfg.fwd_class.index << 3,
        (cfg.direction << 6) | (cfg.reservation_index << 2), int(flags), h.hops,
        cfg.rev_class.index << 3, len(h.tokens))
    for t in h.tokens:
        out += t.pack()
    if flags & Flags.FAILED:
        if len(h.offers) > 255:
            raise MalformedHeader("too many offers")
        if h.decline_as is None:
            raise MalformedHeader("failed header without a decline AS")
        out += struct.pack("!IB", h.decline_as, len(h.offers))
        for as_id, kbps in h.offers:
            out += struct.pack("!Id", as_id, kbps)
    return bytes(out)


def decode_header(raw: bytes) -> SibraHeader:
    raw = bytes(raw)
    if len(raw) < PREFIX_LEN:
        raise MalformedHeader(f"truncated header ({len(raw)} < {PREFIX_LEN} bytes)")
    flow_id = raw[:FLOW_ID_LEN]
    exp, fwd, dir_idx, flags, hops, rev, ntok = struct.unpack_from("!HBBBBBB", raw, 16)
    if fwd & 0x07 or rev & 0x07 or dir_idx & 0x03:
        raise MalformedHeader("nonzero padding bits")
    if flags & ~_KNOWN_FLAGS:
        raise MalformedHeader("unknown flag bits set")
    kind = Kind.EPHEMERAL if flags & Flags.EPHEMERAL else Kind.STEADY
    try:
        direction = Direction(dir_idx >> 6)
        cfg = ReservationConfig(exp, BandwidthClass(kind, fwd >> 3), direction,
                                BandwidthClass(kind, rev >> 3), (dir_idx >> 2) & 0x0F)
    except (ValueError, ClassRangeError) as e:
        raise MalformedHeader(str(e)) from None
    if hops > ntok:
        raise MalformedHeader(f"hops {hops} exceeds token count {ntok}")
    pos = PREFIX_LEN
    end = pos + ntok * TOKEN_LEN
    if len(raw) < end:
        raise MalformedHeader("truncated token list")
    tokens = [ReservationToken.unpack(raw[o:o + TOKEN_LEN])
              for o in range(pos, end, TOKEN_LEN)]
    pos = end
    offers = []
    decline = None
    if flags & Flags.FAILED:
        if len(raw) < pos + 5:
            raise MalformedHeader("truncated offer section")
        decline, n = struct.unpack_from("!IB", raw, pos)
        pos += 5
        if len(raw) < pos + 12 * n:
            raise MalformedHeader("truncated offer list")
        for _ in range(n):
            offers.append(struct.unpack_from("!Id", raw, pos))
            pos += 12
    if pos != len(raw):
        raise MalformedHeader(f"{len(raw) - pos} trailing bytes")
    return SibraHeader(flow_id, cfg, Flags(flags), hops, tokens, offers, decline)


def header_len(n_tokens: int, n_offers: Optional[int] = None) -> int:
    n = PREFIX_LEN + TOKEN_LEN * n_tokens
    if n_offers is not None:
        n += 5 + 12 * n_offers
    return n
