"""Quick-response insertion of dynamic requests.

When a request appears at time ``now`` the plan is frozen up to the stops each
AMR has already left.  Every remaining stop is screened as a predecessor:

    P{A_j + S_j + T_j,req < h_req} > 1 - eps   and   now < E[D_j]

Surviving positions become :class:`InsertionScheme` objects priced by full
re-evaluation (insert, add depot visits for overload, split late routes while
the fleet cap allows).  The cheapest scheme wins.  At the fleet cap a LOW
request is only taken if its added expected delay penalty is below the
rejection loss; a HIGH request is always served, if need be at the cheapest
structurally valid position.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .instance import Priority
from .routing import (
    Mode,
    Route,
    Solution,
    departed,
    fresh_route,
    insert_stop,
)
from .stochastic import GaussianTime, joint_on_time
from .tabu import RepairUnavailable, repair_overload, split_routes


@dataclass(frozen=True)
class InsertionScheme:
    """Insert the request right after stop ``position`` of route ``route``.

    ``route == len(sol.routes)`` means a new AMR (``new_amr``).  ``solution``
    is the repaired plan after insertion and ``marginal_cost`` its total
    cost minus the current one.
    """

    route: int
    trip: int
    predecessor: int
    position: int
    marginal_cost: float
    new_amr: bool
    added_delay: float
    profile: tuple[float, ...] = ()
    solution: Solution | None = field(default=None, repr=False, compare=False)

    @property
    def key(self) -> tuple:
        return (self.marginal_cost, self.route, self.trip, self.predecessor, self.position)


@dataclass(frozen=True)
class DecisionRecord:
    t: float
    req: int
    priority: str
    action: str
    route: int | None
    predecessor: int | None
    marginal_cost: float
    response_ms: float
    new_amr: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass(frozen=True)
class Accept:
    scheme: InsertionScheme


@dataclass(frozen=True)
class Reject:
    reason: str = ""


def _delay_profile(route: Route, start: int) -> tuple[float, ...]:
    cd = route.cum_delay
    return tuple(cd[p] - cd[p - 1] for p in range(max(start, 1), len(cd)) if route.stops[p] != 0)


def _priced(
    sol: Solution,
    k: int,
    pos: int,
    rid: int,
    mode: Mode,
    base_total: float,
) -> InsertionScheme | None:
    """Price insertion after stop ``pos`` of route ``k`` (``k == len`` opens an AMR)."""
    net = sol.net
    params = net.params
    now = sol.now
    new_amr = k == len(sol.routes)
    if new_amr:
        if sol.m >= sol.max_amrs:
            return None
        r = fresh_route([0, rid, 0], net, sol.next_amr_id(), now, {rid: now})
        old_delay = 0.0
        pos = 0
    else:
        old = sol.routes[k]
        r = insert_stop(old, pos, rid, net, now, now)
        r = repair_overload(r, net, mode, now)
        if r.cap_at(mode) is not None:
            return None
        old_delay = old.delay
    added: list[Route] = []
    if r.late_at is not None and sol.m < sol.max_amrs:
        spare = sol.max_amrs - sol.m - (1 if new_amr else 0)
        try:
            (r,), added = split_routes([r], net, now, spare, sol.next_amr_id() + (1 if new_amr else 0))
        except RepairUnavailable:
            pass
    if new_amr:
        after = sol.replace_routes({}, [r] + added)
    else:
        after = sol.replace_routes({k: r}, added)
    added_delay = params.delay_cost * (r.delay + sum(a.delay for a in added) - old_delay)
    if new_amr:
        trip, pred = 0, 0
    else:
        trip, pred = sol.routes[k].trip_of(pos), sol.routes[k].stops[pos]
    return InsertionScheme(
        k,
        trip,
        pred,
        pos,
        after.total - base_total,
        new_amr,
        added_delay,
        _delay_profile(r, pos + 1),
        after,
    )


def _passes_screen(route: Route, p: int, rid: int, sol: Solution, now: float, eps: float) -> bool:
    net = sol.net
    j = route.stops[p]
    mean = route.a_mean[p] + net.s_mean[j] + net.dist[j][rid]
    var = route.a_var[p] + net.s_var[j] + net.params.travel_var
    dep = GaussianTime(route.d_mean[p], route.d_var[p])
    return joint_on_time(GaussianTime(mean, var), net.due[rid], now, dep) > 1.0 - eps


def candidate_positions(sol: Solution, now: float) -> list[tuple[int, int]]:
    """All structurally valid ``(route, predecessor position)`` pairs at ``now``."""
    out = []
    for k, r in enumerate(sol.routes):
        lock = departed(r, now)
        for p in range(lock, len(r.stops)):
            out.append((k, p))
    return out


def find_insertion_points(
    req: int,
    sol: Solution,
    now: float,
    eps: float | None = None,
    mode: Mode = Mode.DYNAMIC,
) -> list[InsertionScheme]:
    """Screened and priced insertion schemes for request id ``req``."""
    sol = sol if sol.now == now else sol.with_(now=now)
    if eps is None:
        eps = sol.net.params.eps
    base = sol.total
    out = []
    for k, p in candidate_positions(sol, now):
        r = sol.routes[k]
        if not _passes_screen(r, p, req, sol, now, eps):
            continue
        s = _priced(sol, k, p, req, mode, base)
        if s is not None:
            out.append(s)
    if sol.m < sol.max_amrs:
        net = sol.net
        x = GaussianTime(now + net.dist[0][req], net.params.travel_var)
        if joint_on_time(x, net.due[req], now, GaussianTime(float("inf"))) > 1.0 - eps:
            s = _priced(sol, len(sol.routes), 0, req, mode, base)
            if s is not None:
                out.append(s)
    return out


def forced_schemes(req: int, sol: Solution, now: float, mode: Mode = Mode.DYNAMIC) -> list[InsertionScheme]:
    """Every structurally valid position, no screening (mandatory requests)."""
    sol = sol if sol.now == now else sol.with_(now=now)
    base = sol.total
    out = []
    for k, p in candidate_positions(sol, now):
        s = _priced(sol, k, p, req, mode, base)
        if s is not None:
            out.append(s)
    if sol.m < sol.max_amrs:
        s = _priced(sol, len(sol.routes), 0, req, mode, base)
        if s is not None:
            out.append(s)
    return out


def assign_high_priority(schemes: Sequence[InsertionScheme]) -> InsertionScheme | None:
    """Cheapest scheme; ties go to the lowest (route, trip, predecessor)."""
    if not schemes:
        return None
    return min(schemes, key=lambda s: s.key)


def decide_low_priority(best: InsertionScheme | None, rejection_cost: float) -> Accept | Reject:
    """Accept iff the rejection loss strictly exceeds the scheme's added delay penalty."""
    if best is None:
        return Reject("no insertion point")
    if rejection_cost > best.added_delay:
        return Accept(best)
    return Reject(f"added delay penalty {best.added_delay:.6g} >= rejection loss {rejection_cost:.6g}")


def _record(now, rid, priority, action, scheme, cost, t0) -> DecisionRecord:
    ms = (time.perf_counter() - t0) * 1000.0
    if scheme is None:
        return DecisionRecord(now, rid, priority.value, action, None, None, cost, ms, False)
    sol = scheme.solution
    amr = None
    for r in sol.routes:
        if rid in r.stops:
            amr = r.amr
            break
    return DecisionRecord(now, rid, priority.value, action, amr, scheme.predecessor, cost, ms, scheme.new_amr)


def insert_dynamic(
    req: int,
    sol: Solution,
    now: float,
    priority: Priority = Priority.HIGH,
    mode: Mode = Mode.DYNAMIC,
) -> tuple[Solution, DecisionRecord]:
    """Serve or reject one dynamic request; returns the new plan and its record."""
    t0 = time.perf_counter()
    if req not in sol.net or req == 0:
        raise KeyError(f"request {req} is not in the network")
    if req in sol.rejected or sol.locate(req) is not None:
        raise ValueError(f"request {req} is already planned")
    sol = sol.with_(now=now)
    params = sol.net.params
    schemes = find_insertion_points(req, sol, now, params.eps, mode)
    best = assign_high_priority(schemes)
    action = "insert"
    if sol.m >= sol.max_amrs and priority is Priority.LOW:
        verdict = decide_low_priority(best, params.rejection_cost)
        if isinstance(verdict, Reject):
            best = None
    if best is None and priority is Priority.HIGH:
        best = assign_high_priority(forced_schemes(req, sol, now, mode))
        action = "forced"
        if best is None:
            raise RuntimeError(f"no structurally valid position for request {req}")
    if best is None:
        after = sol.with_(rejected=sol.rejected | {req})
        return after, _record(now, req, priority, "reject", None, params.rejection_cost, t0)
    return best.solution, _record(now, req, priority, action, best, best.marginal_cost, t0)


def write_timeline(records: Iterable[DecisionRecord], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_timeline(path) -> list[DecisionRecord]:
    with open(path) as fh:
        return [DecisionRecord(**json.loads(line)) for line in fh if line.strip()]
