"""Scenario descriptions and their YAML form (``format: 1``).

Example::

    format: 1
    kind: doc_intra
    seed: 7
    topology: {generator: tiered, n_isd: 2, ases: 200, seed: 0}
    attackers: 50
    params: {duration_s: 15}

``topology`` may also be a path relative to the scenario file.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

from sibra.errors import ScenarioError, TopologyError
from sibra.simnet.topology import GENERATORS, check_format, load_topology, parse_yaml

KINDS = ("doc_intra", "doc_inter", "coremelt", "lowerbound", "loss", "dill")
DEFAULT_TOPOLOGY = {
    "doc_intra": {"generator": "tiered"},
    "doc_inter": {"generator": "tiered"},
    "coremelt": {"generator": "dumbbell"},
    "lowerbound": {"generator": "star"},
    "loss": {"generator": "line", "n": 11, "capacity": 1e7},
    "dill": {"generator": "line", "n": 4},
}


@dataclass
class Scenario:
    kind: str
    seed: int = 0
    attackers: Optional[object] = None  # count, or per-kind list
    request_rate: float = 10.0  # requests per second per legitimate source
    request_bytes: int = 125
    request_limit: float = 0.05  # request channel as a fraction of capacity
    timeout_s: float = 4.0
    loss_rate: float = 0.0
    params: dict = field(default_factory=dict)
    topology: object = None  # dict (generator spec), path, or None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScenarioError(f"unknown scenario kind '{self.kind}' (expected one of {KINDS})")
        if not 0 <= self.loss_rate < 1:
            raise ScenarioError("loss_rate must be in [0, 1)")
        if self.timeout_s <= 0 or self.request_rate <= 0:
            raise ScenarioError("timeout_s and request_rate must be positive")

    def param(self, name, default):
        return self.params.get(name, default)


def _topology_ref(ref, base_dir):
    if isinstance(ref, str) and base_dir and not os.path.isabs(ref):
        return os.path.join(base_dir, ref)
    return ref


def loads_scenario(text: str, path=None) -> Scenario:
    try:
        doc = parse_yaml(text, path)
        check_format(doc, path)
    except TopologyError as e:
        raise ScenarioError(str(e)) from None
    known = {"format", "kind", "seed", "attackers", "request_rate", "request_bytes",
             "request_limit", "timeout_s", "loss_rate", "params", "topology"}
    extra = sorted(set(doc) - known)
    if extra:
        where = f"{path}:{doc.line}: " if path else ""
        raise ScenarioError(f"{where}unknown scenario field '{extra[0]}'")
    kw = {k: v for k, v in doc.items() if k != "format"}
    if "kind" not in kw:
        raise ScenarioError("scenario is missing 'kind'")
    kw["params"] = dict(kw.get("params") or {})
    base = os.path.dirname(os.path.abspath(path)) if path else None
    kw["topology"] = _topology_ref(kw.get("topology"), base)
    try:
        return Scenario(**kw)
    except TypeError as e:
        raise ScenarioError(str(e)) from None


def load_scenario(path) -> Scenario:
    with open(path) as f:
        return loads_scenario(f.read(), str(path))


def resolve_topology(scn: Scenario, override=None):
    """The topology object for a scenario: explicit override, file, or generator spec."""
    ref = override if override is not None else scn.topology
    if ref is None:
        ref = DEFAULT_TOPOLOGY[scn.kind]
    if isinstance(ref, str):
        return load_topology(ref)
    if isinstance(ref, dict):
        spec = dict(ref)
        name = spec.pop("generator", None)
        if name not in GENERATORS:
            raise ScenarioError(f"unknown topology generator '{name}'")
        try:
            return GENERATORS[name](**spec)
        except TypeError as e:
            raise ScenarioError(f"bad generator arguments: {e}") from None
    return ref
