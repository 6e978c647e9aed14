"""Deterministic golden vectors for the header codec and token chain.

Run ``python -m sibra.vectors tests/data/header_vectors.json`` to regenerate.
"""
from __future__ import annotations

import json
import random
import sys

from sibra.classes import BandwidthClass, Direction, Kind, ReservationConfig
from sibra.tokens import (Flags, MacKey, RequestInfo, SibraHeader, encode_header,
                          issue_token)


def _chain(keys, req, hops):
    toks = []
    prev = None
    for i, k in enumerate(keys[:hops]):
        t = issue_token(k, i, i + 1, req, prev)
        toks.append(t)
        prev = t
    return toks


def build_vectors(seed: int = 2015) -> list:
    rng = random.Random(seed)
    keys = [MacKey(rng.getrandbits(128).to_bytes(16, "big")) for _ in range(6)]
    out = []
    cases = [
        ("steady_empty", Kind.STEADY, 0, Direction.FORWARD, 0, Flags.NONE),
        ("steady_5_tokens", Kind.STEADY, 11, Direction.FORWARD, 5, Flags.NONE),
        ("ephemeral_bidir", Kind.EPHEMERAL, 19, Direction.BIDIRECTIONAL, 3,
         Flags.EPHEMERAL | Flags.CONFIRM),
        ("ephemeral_renewal", Kind.EPHEMERAL, 7, Direction.FORWARD, 4,
         Flags.EPHEMERAL | Flags.RENEWAL),
        ("failed_with_offers", Kind.EPHEMERAL, 9, Direction.FORWARD, 2,
         Flags.EPHEMERAL | Flags.FAILED),
    ]
    for name, kind, idx, direction, ntok, flags in cases:
        flow = rng.getrandbits(128).to_bytes(16, "big")
        cls = BandwidthClass(kind, idx)
        cfg = ReservationConfig(rng.randrange(1 << 16), cls, direction,
                                BandwidthClass(kind, rng.randrange(idx + 1)),
                                rng.randrange(16))
        req = RequestInfo(cls, cfg.expiration, flow)
        toks = _chain(keys, req, ntok)
        h = SibraHeader(flow, cfg, flags, ntok, toks)
        if flags & Flags.FAILED:
            h.hops = 0
            h.decline_as = 1003
            h.offers = [(1003, 1448.1546878700492), (1004, 2048.0)]
        out.append({
            "name": name,
            "keys": [k._raw.hex() for k in keys[:ntok]],
            "flow_id": flow.hex(),
            "kind": kind.name.lower(),
            "fwd_class": idx,
            "rev_class": cfg.rev_class.index,
            "expiration": cfg.expiration,
            "direction": direction.name.lower(),
            "reservation_index": cfg.reservation_index,
            "flags": int(flags),
            "hops": h.hops,
            "tokens": [t.pack().hex() for t in toks],
            "decline_as": h.decline_as,
            "offers": [list(o) for o in h.offers],
            "wire": encode_header(h).hex(),
        })
    return out


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    text = json.dumps(build_vectors(), indent=2) + "\n"
    if argv:
        with open(argv[0], "w", newline="\n") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
