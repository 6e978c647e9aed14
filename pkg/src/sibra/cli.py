"""``sibra`` command line for class ladders, leaf fair share, header codec and simulations.

Exit status: 0 success, 1 domain error, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import re
import sys

from sibra.classes import BandwidthClass, Direction, Kind, LinkAnatomy, ReservationConfig, ladder_size
from sibra.errors import (ClassRangeError, ContractError, MalformedHeader, ScenarioError, ShareDomainError, SibraError,
                          TopologyError)
from sibra.fairshare import leaf_fair_share
from sibra.tokens import Flags, ReservationToken, SibraHeader, decode_header, encode_header

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2

_UNITS = {"": 1, "k": 1e3, "m": 1e6, "g": 1e9, "t": 1e12}


class UsageError(Exception):
    pass


def parse_bandwidth(text: str) -> float:
    """'15.04T', '6Tbps', '800k', '1e9' -> bps."""
    m = re.fullmatch(r"\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*([kKmMgGtT]?)(?:bps|b/s)?\s*", text)
    if not m:
        raise UsageError(f"cannot parse bandwidth '{text}'")
    return float(m.group(1)) * _UNITS[m.group(2).lower()]


def parse_anatomy(text: str) -> LinkAnatomy:
    try:
        eph, steady, be = (float(x) for x in text.split(","))
    except ValueError:
        raise UsageError("--anatomy takes three fractions: ephemeral,steady,best-effort") from None
    try:
        return LinkAnatomy(1.0, eph, steady, be)
    except (ValueError, SibraError) as e:
        raise ShareDomainError(str(e)) from None


def _writer(out):
    return csv.writer(out, lineterminator="\n")


# -- header dict form (same fields as the golden vectors) ------------------------


def header_to_dict(h: SibraHeader) -> dict:
    c = h.config
    return {
        "flow_id": h.flow_id.hex(),
        "kind": c.kind.name.lower(),
        "fwd_class": c.fwd_class.index,
        "rev_class": c.rev_class.index,
        "expiration": c.expiration,
        "direction": c.direction.name.lower(),
        "reservation_index": c.reservation_index,
        "flags": int(h.flags),
        "hops": h.hops,
        "tokens": [t.pack().hex() for t in h.tokens],
        "decline_as": h.decline_as,
        "offers": [list(o) for o in h.offers],
    }


def header_from_dict(d: dict) -> SibraHeader:
    try:
        kind = Kind[str(d["kind"]).upper()]
        cfg = ReservationConfig(int(d["expiration"]), BandwidthClass(kind, int(d["fwd_class"])),
                                Direction[str(d.get("direction", "forward")).upper()],
                                BandwidthClass(kind, int(d.get("rev_class", 0))),
                                int(d.get("reservation_index", 0)))
        flow = bytes.fromhex(d["flow_id"])
        toks = [ReservationToken.unpack(bytes.fromhex(t)) for t in d.get("tokens", [])]
        flags = Flags(int(d.get("flags", Flags.EPHEMERAL if kind == Kind.EPHEMERAL else 0)))
        return SibraHeader(flow, cfg, flags, int(d.get("hops", len(toks))), toks,
                           [(int(a), float(k)) for a, k in d.get("offers", [])],
                           d.get("decline_as"))
    except ClassRangeError:
        raise
    except KeyError as e:
        raise MalformedHeader(f"header spec is missing or has a bad value for {e}") from None
    except (TypeError, ValueError) as e:
        raise MalformedHeader(f"bad header spec: {e}") from None


# -- subcommands ----------------------------------------------------------------------


def cmd_classes(args, out) -> int:
    rows = []
    for kind, label in ((Kind.STEADY, "Steady"), (Kind.EPHEMERAL, "Ephemeral")):
        for i in range(ladder_size(kind)):
            rows.append((label, i, BandwidthClass(kind, i).rate))
    if args.format == "csv":
        w = _writer(out)
        w.writerow(["kind", "index", "kbps", "mbps"])
        for label, i, r in rows:
            w.writerow([label, i, f"{r:.2f}", f"{r / 1000:.2f}"])
    else:
        for label, i, r in rows:
            out.write(f"{label:<10}{i:>3}  {r:>12.2f} kbps  {r / 1000:>9.2f} Mbps\n")
    return EXIT_OK


def cmd_leaf_share(args, out) -> int:
    cap = parse_bandwidth(args.capacity)
    anatomy = parse_anatomy(args.anatomy) if args.anatomy else None
    total, eph = leaf_fair_share(cap, args.leaves, anatomy)
    if args.format == "csv":
        w = _writer(out)
        w.writerow(["capacity_mbps", "leaves", "share_mbps", "ephemeral_mbps"])
        w.writerow([f"{cap / 1e6:.2f}", args.leaves, f"{total / 1e6:.2f}", f"{eph / 1e6:.2f}"])
    else:
        out.write(f"capacity   {cap / 1e6:.2f} Mbps\n")
        out.write(f"leaves     {args.leaves}\n")
        out.write(f"share      {total / 1e6:.2f} Mbps\n")
        out.write(f"ephemeral  {eph / 1e6:.2f} Mbps\n")
    return EXIT_OK


def cmd_header(args, out) -> int:
    if args.decode is not None:
        try:
            raw = bytes.fromhex(args.decode.strip())
        except ValueError:
            raise MalformedHeader("input is not valid hex") from None
        d = header_to_dict(decode_header(raw))
        if args.format == "csv":
            w = _writer(out)
            w.writerow(["field", "value"])
            for k, v in d.items():
                w.writerow([k, json.dumps(v) if isinstance(v, (list, type(None))) else v])
        else:
            for k, v in d.items():
                if k == "tokens":
                    out.write(f"{'tokens':<18}{len(v)}\n")
                    for i, t in enumerate(v):
                        out.write(f"  [{i}] {t}\n")
                else:
                    out.write(f"{k:<18}{v}\n")
        return EXIT_OK
    text = args.encode
    if text.startswith("@"):
        with open(text[1:]) as f:
            text = f.read()
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as e:
        raise UsageError(f"--encode expects JSON: {e}") from None
    if not isinstance(spec, dict):
        raise UsageError("--encode expects a JSON object")
    out.write(encode_header(header_from_dict(spec)).hex() + "\n")
    return EXIT_OK


def cmd_simulate(args, out) -> int:
    from sibra.router import EventLog
    from sibra.simnet.experiments import run_scenario
    from sibra.simnet.metrics import emit_metrics, to_csv
    from sibra.simnet.scenario import load_scenario, resolve_topology
    from sibra.simnet.topology import load_topology

    scn = load_scenario(args.scenario)
    if args.seed is not None:
        scn.seed = args.seed
    if args.attackers is not None:
        scn.attackers = args.attackers
    topo = resolve_topology(scn, load_topology(args.topology) if args.topology else None)
    log = EventLog() if args.events else None
    m = run_scenario(topo, scn, log)
    if args.out:
        emit_metrics(m, args.out)
    else:
        out.write(to_csv(m))
    if args.events:
        with open(args.events, "w", newline="") as f:
            f.write(log.to_jsonl())
    if args.out:
        if args.format == "plain":
            for k in sorted(m.scalars):
                v = m.scalars[k]
                out.write(f"{k:<24}{v:.2f}\n" if isinstance(v, float) else f"{k:<24}{v}\n")
    return EXIT_OK


def cmd_topology(args, out) -> int:
    from sibra.simnet.topology import GENERATORS
    kw = {}
    if args.generator == "tiered":
        kw = {"n_isd": args.n_isd, "ases": args.ases, "seed": args.seed}
    elif args.generator in ("dumbbell", "star"):
        kw = {"seed": args.seed}
    topo = GENERATORS[args.generator](**kw)
    if args.out:
        with open(args.out, "w", newline="\n") as f:
            f.write(topo.dumps())
    elif not args.digest:
        out.write(topo.dumps())
    if args.digest:
        out.write(topo.digest() + "\n")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sibra", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--format", choices=("plain", "csv"), default="plain")
        sp.add_argument("--seed", type=int, default=None,
                        help="random seed (default: the scenario's, which defaults to 0)")
        return sp

    sp = common(sub.add_parser("classes", help="print both bandwidth class ladders"))
    sp.set_defaults(fn=cmd_classes)

    sp = common(sub.add_parser("leaf-share", help="equal split of core capacity across leaves"))
    sp.add_argument("--capacity", required=True, help="aggregate capacity, e.g. 15.04T (bps)")
    sp.add_argument("--leaves", required=True, type=int)
    sp.add_argument("--anatomy", help="ephemeral,steady,best-effort fractions (default 0.80,0.05,0.15)")
    sp.set_defaults(fn=cmd_leaf_share)

    sp = common(sub.add_parser("header", help="decode or encode a SIBRA header"))
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--decode", metavar="HEX")
    g.add_argument("--encode", metavar="JSON", help="header fields as JSON, or @file")
    sp.set_defaults(fn=cmd_header)

    sp = common(sub.add_parser("simulate", help="run a scenario and write CSV metrics"))
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--topology", help="topology file (overrides the scenario's)")
    sp.add_argument("--out", help="metrics CSV path (default: standard output)")
    sp.add_argument("--events", help="write the router event log as JSON lines")
    sp.add_argument("--attackers", type=int, help="override the scenario's attacker count")
    sp.set_defaults(fn=cmd_simulate)

    sp = common(sub.add_parser("topology", help="generate a topology file"))
    sp.add_argument("--generator", choices=("tiered", "dumbbell", "star", "line"), default="tiered")
    sp.add_argument("--n-isd", type=int, default=2)
    sp.add_argument("--ases", type=int, default=200)
    sp.add_argument("--out")
    sp.add_argument("--digest", action="store_true",
                    help="print the sha256 digest (instead of the YAML unless --out is given)")
    sp.set_defaults(fn=cmd_topology)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if getattr(args, "seed", None) is None and args.cmd == "topology":
        args.seed = 0
    try:
        return args.fn(args, out)
    except (UsageError, OSError, TopologyError, ScenarioError, MalformedHeader) as e:
        sys.stderr.write(f"sibra: {e}\n")
        return EXIT_USAGE
    except (ShareDomainError, ContractError, SibraError, ArithmeticError, ValueError) as e:
        sys.stderr.write(f"sibra: {e}\n")
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
