"""Experiment outputs and their CSV form (columns t, series, value)."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if math.isnan(v):
        return "nan"
    return format(float(v), ".10g")


@dataclass
class Metrics:
    rows: list = field(default_factory=list)  # (t seconds, series, value)
    scalars: dict = field(default_factory=dict)
    end_s: float = 0.0
    events: list = field(default_factory=list)

    def add(self, t: float, series: str, value: float) -> None:
        self.rows.append((t, series, value))

    def series(self, name: str) -> list:
        return [(t, v) for t, s, v in self.rows if s == name]

    def set(self, name: str, value) -> None:
        self.scalars[name] = value

    def __getitem__(self, name):
        return self.scalars[name]

    @property
    def success_ratio(self):
        return self.scalars.get("success_ratio")

    @property
    def transfer_time(self):
        return self.scalars.get("transfer_time_s")

    @property
    def waste_rate(self):
        return self.scalars.get("r_waste")


def to_csv(m: Metrics) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "series", "value"])
    for t, s, v in m.rows:
        w.writerow([_fmt(t), s, _fmt(v)])
    for name in sorted(m.scalars):
        w.writerow([_fmt(m.end_s), name, _fmt(m.scalars[name])])
    return buf.getvalue()


def emit_metrics(m: Metrics, path) -> None:
    with open(path, "w", newline="") as f:
        f.write(to_csv(m))
