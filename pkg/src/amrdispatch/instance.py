"""Benchmark instances: Solomon-format parsing and dynamization.

A :class:`StaticInstance` is what a Solomon/Lackner text file describes.  The
:func:`dynamize` step turns it into a :class:`DynamicInstance` by holding back
a fraction of the requests, giving each a reveal epoch and a priority class.
The dynamization result is serialisable to a small JSON record so that a run
can be replayed from ``(instance file, record)`` alone.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

DEFAULT_SERVICE_VAR = 10.0
DEFAULT_TRAVEL_VAR = 10.0

# reveal epoch used when a request has no slack before its window opens
MIN_EPOCH = 1e-6


class InstanceError(ValueError):
    pass


class SolomonParseError(InstanceError):
    def __init__(self, lineno: int | None, msg: str):
        self.lineno = lineno
        where = f"line {lineno}: " if lineno is not None else ""
        super().__init__(where + msg)


class Priority(str, enum.Enum):
    HIGH = "HIGH"
    LOW = "LOW"


@dataclass(frozen=True)
class RequestSpec:
    id: int
    x: float
    y: float
    demand: float
    early: float
    due: float
    service_mean: float
    service_var: float = DEFAULT_SERVICE_VAR

    @property
    def window(self) -> tuple[float, float]:
        return self.early, self.due


@dataclass(frozen=True)
class StaticInstance:
    depot: tuple[float, float]
    requests: tuple[RequestSpec, ...]
    capacity: float
    horizon: tuple[float, float]
    name: str = ""
    vehicles: int = 0

    def __post_init__(self):
        seen = set()
        for r in self.requests:
            if r.id in seen or r.id <= 0:
                raise InstanceError(f"bad or duplicate request id {r.id}")
            seen.add(r.id)

    @property
    def n(self) -> int:
        return len(self.requests)

    def request(self, rid: int) -> RequestSpec:
        for r in self.requests:
            if r.id == rid:
                return r
        raise KeyError(f"unknown request id {rid}")

    def coords(self, node: int) -> tuple[float, float]:
        if node == 0:
            return self.depot
        r = self.request(node)
        return r.x, r.y

    def validate(self) -> None:
        e0, h0 = self.horizon
        for r in self.requests:
            if not 0 < r.demand <= self.capacity:
                raise InstanceError(f"request {r.id}: demand {r.demand} outside (0, {self.capacity}]")
            if r.early > r.due:
                raise InstanceError(f"request {r.id}: window [{r.early}, {r.due}] is empty")
            if r.early < e0 or r.due > h0:
                raise InstanceError(f"request {r.id}: window outside depot horizon [{e0}, {h0}]")
            if r.service_var < 0 or r.service_mean < 0:
                raise InstanceError(f"request {r.id}: negative service time")


def mean_travel_time(inst: StaticInstance, i: int, j: int) -> float:
    """Mean travel time between two nodes: their Euclidean distance (unit speed)."""
    xi, yi = inst.coords(i)
    xj, yj = inst.coords(j)
    return math.hypot(xi - xj, yi - yj)


# -- Solomon text -------------------------------------------------------------

_SPLIT = re.compile(r"[,\s]+")


def _numbers(line: str, lineno: int) -> list[float]:
    out = []
    for tok in _SPLIT.split(line.strip()):
        if not tok:
            continue
        try:
            out.append(float(tok))
        except ValueError:
            raise SolomonParseError(lineno, f"non-numeric field {tok!r}") from None
    return out


def parse_solomon(text: str, service_var: float = DEFAULT_SERVICE_VAR) -> StaticInstance:
    """Parse Solomon VRPTW text.

    The layout is a name line, a ``VEHICLE`` block whose ``NUMBER CAPACITY``
    header is followed by the two values, then a ``CUSTOMER`` block whose
    column header is followed by rows ``id x y demand ready due service``.
    The first row is the depot.  Fields may be separated by whitespace or commas.
    """
    lines = text.splitlines()
    name = ""
    vehicles = capacity = None
    cust_header = None
    for idx, raw in enumerate(lines):
        s = raw.strip()
        if not s:
            continue
        upper = s.upper()
        if cust_header is not None:
            if upper.startswith("CUST"):
                cust_header = idx
                continue
            break
        if not name and "VEHICLE" not in upper and "CUST" not in upper and not s[0].isdigit():
            name = s
        if "CAPACITY" in upper and vehicles is None:
            for jdx in range(idx + 1, len(lines)):
                if lines[jdx].strip():
                    vals = _numbers(lines[jdx], jdx + 1)
                    if len(vals) != 2:
                        raise SolomonParseError(jdx + 1, "expected vehicle number and capacity")
                    vehicles, capacity = int(vals[0]), vals[1]
                    break
        if upper.startswith("CUST"):
            cust_header = idx
    if capacity is None:
        raise SolomonParseError(None, "missing VEHICLE/CAPACITY section")
    if cust_header is None:
        raise SolomonParseError(None, "missing CUSTOMER section")

    depot = None
    horizon = None
    requests: list[RequestSpec] = []
    seen: set[int] = set()
    for idx in range(cust_header + 1, len(lines)):
        raw = lines[idx]
        if not raw.strip():
            continue
        lineno = idx + 1
        vals = _numbers(raw, lineno)
        if len(vals) != 7:
            raise SolomonParseError(lineno, f"expected 7 fields, got {len(vals)}")
        nid, x, y, q, ready, due, service = vals
        if nid != int(nid):
            raise SolomonParseError(lineno, f"non-integer id {nid}")
        nid = int(nid)
        if depot is None:
            depot = (x, y)
            horizon = (ready, due)
            seen.add(nid)
            continue
        if nid in seen:
            raise SolomonParseError(lineno, f"duplicate id {nid}")
        if nid <= 0:
            raise SolomonParseError(lineno, f"request id must be positive, got {nid}")
        seen.add(nid)
        if not 0 < q <= capacity:
            raise SolomonParseError(lineno, f"demand {q} outside (0, {capacity}]")
        if ready > due:
            raise SolomonParseError(lineno, f"empty window [{ready}, {due}]")
        if ready < horizon[0] or due > horizon[1]:
            raise SolomonParseError(lineno, "window outside depot horizon")
        if service < 0:
            raise SolomonParseError(lineno, "negative service time")
        requests.append(RequestSpec(nid, x, y, q, ready, due, service, service_var))
    if depot is None:
        raise SolomonParseError(None, "no depot row")
    return StaticInstance(depot, tuple(requests), capacity, horizon, name, vehicles)


def load_solomon(path: str | Path, service_var: float = DEFAULT_SERVICE_VAR) -> StaticInstance:
    path = Path(path)
    inst = parse_solomon(path.read_text(), service_var)
    if not inst.name:
        inst = replace(inst, name=path.stem)
    return inst


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() and abs(v) < 1e15 else repr(float(v))


def serialize_solomon(inst: StaticInstance) -> str:
    rows = [
        inst.name or "INSTANCE",
        "",
        "VEHICLE",
        "NUMBER     CAPACITY",
        f"  {inst.vehicles}         {_fmt(inst.capacity)}",
        "",
        "CUSTOMER",
        "CUST NO.  XCOORD.   YCOORD.    DEMAND   READY TIME  DUE DATE   SERVICE TIME",
        "",
    ]
    e0, h0 = inst.horizon
    dx, dy = inst.depot
    rows.append("    " + "  ".join(_fmt(v) for v in (0, dx, dy, 0, e0, h0, 0)))
    for r in inst.requests:
        vals = (r.id, r.x, r.y, r.demand, r.early, r.due, r.service_mean)
        rows.append("    " + "  ".join(_fmt(v) for v in vals))
    return "\n".join(rows) + "\n"


# -- dynamization ---------------------------------------------------------------


@dataclass(frozen=True)
class DynamicEvent:
    arrival: float
    request: RequestSpec
    priority: Priority


@dataclass(frozen=True)
class DynamicInstance:
    static_part: StaticInstance
    events: tuple[DynamicEvent, ...]
    delta: float
    high_fraction: float = 0.5
    seed: int = 0
    travel_var: float = DEFAULT_TRAVEL_VAR

    @property
    def n_dynamic(self) -> int:
        return len(self.events)

    @property
    def n_static(self) -> int:
        return self.static_part.n

    @property
    def name(self) -> str:
        return self.static_part.name

    def all_requests(self) -> list[RequestSpec]:
        out = list(self.static_part.requests) + [ev.request for ev in self.events]
        return sorted(out, key=lambda r: r.id)

    def ids_by_priority(self, priority: Priority) -> set[int]:
        return {ev.request.id for ev in self.events if ev.priority is priority}

    def to_record(self) -> dict:
        return {
            "delta": self.delta,
            "seed": self.seed,
            "high_fraction": self.high_fraction,
            "events": [
                {"id": ev.request.id, "a": ev.arrival, "priority": ev.priority.value}
                for ev in self.events
            ],
        }


def _sorted_events(events) -> tuple[DynamicEvent, ...]:
    return tuple(sorted(events, key=lambda ev: (ev.arrival, ev.request.id)))


def dynamize(
    inst: StaticInstance,
    delta: float,
    high_fraction: float = 0.5,
    seed: int = 0,
    travel_var: float = DEFAULT_TRAVEL_VAR,
) -> DynamicInstance:
    """Hold back ``floor(delta * n)`` requests as dynamic arrivals.

    Dynamic requests are drawn uniformly without replacement; the first
    ``ceil(high_fraction * n_d)`` of them (in draw order) are HIGH priority.
    Each is revealed at an epoch uniform on ``(0, e_i - t0_i]`` where ``t0_i``
    is the mean depot travel time, so it is still reachable when it appears.
    """
    if not 0 <= delta < 1:
        raise InstanceError(f"dynamic degree must lie in [0, 1), got {delta}")
    if not 0 <= high_fraction <= 1:
        raise InstanceError(f"high_fraction must lie in [0, 1], got {high_fraction}")
    n = inst.n
    n_d = math.floor(delta * n + 1e-9)
    rng = np.random.default_rng(seed)
    ids = [r.id for r in inst.requests]
    picked = [int(i) for i in rng.choice(ids, size=n_d, replace=False)] if n_d else []
    n_high = math.ceil(high_fraction * n_d - 1e-9)
    events = []
    for k, rid in enumerate(picked):
        req = inst.request(rid)
        upper = max(req.early - mean_travel_time(inst, 0, rid), 0.0)
        u = rng.random()
        a = upper * (1.0 - u) if upper > 0 else MIN_EPOCH
        prio = Priority.HIGH if k < n_high else Priority.LOW
        events.append(DynamicEvent(float(a), req, prio))
    dyn = set(picked)
    static = replace(inst, requests=tuple(r for r in inst.requests if r.id not in dyn))
    return DynamicInstance(static, _sorted_events(events), delta, high_fraction, seed, travel_var)


def from_record(inst: StaticInstance, record: dict, travel_var: float = DEFAULT_TRAVEL_VAR) -> DynamicInstance:
    """Rebuild a dynamized instance from its JSON record."""
    events = []
    for ev in record["events"]:
        events.append(DynamicEvent(float(ev["a"]), inst.request(int(ev["id"])), Priority(ev["priority"])))
    dyn = {ev.request.id for ev in events}
    static = replace(inst, requests=tuple(r for r in inst.requests if r.id not in dyn))
    return DynamicInstance(
        static,
        _sorted_events(events),
        float(record["delta"]),
        float(record.get("high_fraction", 0.5)),
        int(record.get("seed", 0)),
        travel_var,
    )


def write_record(dinst: DynamicInstance, path: str | Path) -> None:
    Path(path).write_text(json.dumps(dinst.to_record(), indent=1) + "\n")


def read_record(inst: StaticInstance, path: str | Path, travel_var: float = DEFAULT_TRAVEL_VAR) -> DynamicInstance:
    return from_record(inst, json.loads(Path(path).read_text()), travel_var)
