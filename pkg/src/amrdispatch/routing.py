"""Multi-trip routes, time propagation and the cost model.

A route is the ordered stop list of one AMR, ``0, r1, r2, 0, r3, 0``: the
depot id ``0`` opens the plan, closes it, and separates trips (each depot
visit reloads to full capacity).  Routes are value objects; every change
produces a new, fully propagated :class:`Route`.

Times are propagated with the "last minute" rule: the AMR waits where it is
and leaves just in time to arrive when the next window opens, so

    A_j = max{A_i + S_i + T_ij, e_j}
    D_i = max{A_i + S_i, e_j - E[T_ij]}

using the normal approximation of :mod:`amrdispatch.stochastic`.

Each stop also carries a ``ready`` epoch: the leg *into* that stop cannot
start before it.  Static plans have ``ready == 0`` everywhere; a leg created
while the fleet is already moving (dynamic insertion, repair, polish) is
stamped with the decision time so a plan never departs before it was made.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

from .instance import DEFAULT_TRAVEL_VAR, DynamicInstance, RequestSpec, StaticInstance
from .stochastic import GaussianTime, _lateness, _max_const, _prob_before

INF = math.inf
_TOL = 1e-9


class Mode(str, enum.Enum):
    """Capacity rule: STATIC keeps a safety stock ``Q*psi``, DYNAMIC only needs ``u >= q``."""

    STATIC = "STATIC"
    DYNAMIC = "DYNAMIC"


class InfeasiblePosition(ValueError):
    pass


@dataclass(frozen=True)
class Params:
    rejection_cost: float = 1000.0
    travel_cost: float = 1.0
    delay_cost: float = 100.0
    fixed_cost: float = 3000.0
    travel_var: float = DEFAULT_TRAVEL_VAR
    psi: float = 0.2
    eps: float = 0.05

    def __post_init__(self):
        if not 0 <= self.psi <= 1:
            raise ValueError(f"psi must lie in [0, 1], got {self.psi}")
        if not 0 < self.eps < 1:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        if self.travel_var < 0:
            raise ValueError("travel variance must be non-negative")


class Network:
    """Node table, distance matrix and cost parameters for one problem.

    Node ``0`` is the depot; requests keep their instance ids.  Lookups are
    plain lists indexed by node id because the evaluation loops are hot.
    """

    def __init__(
        self,
        depot: tuple[float, float],
        requests: Iterable[RequestSpec],
        capacity: float,
        horizon: tuple[float, float],
        params: Params | None = None,
    ):
        self.depot = depot
        self.capacity = float(capacity)
        self.horizon = horizon
        self.params = params or Params()
        self.requests: dict[int, RequestSpec] = {}
        for r in requests:
            self.requests[r.id] = r
        self._build()

    @classmethod
    def from_static(cls, inst: StaticInstance, params: Params | None = None) -> "Network":
        return cls(inst.depot, inst.requests, inst.capacity, inst.horizon, params)

    @classmethod
    def from_dynamic(cls, dinst: DynamicInstance, params: Params | None = None) -> "Network":
        st = dinst.static_part
        return cls(st.depot, dinst.all_requests(), st.capacity, st.horizon, params)

    def _build(self):
        size = max(self.requests, default=0) + 1
        self.size = size
        e0, h0 = self.horizon
        self.x = [self.depot[0]] * size
        self.y = [self.depot[1]] * size
        self.demand = [0.0] * size
        self.early = [e0] * size
        self.due = [h0] * size
        self.s_mean = [0.0] * size
        self.s_var = [0.0] * size
        for r in self.requests.values():
            self.x[r.id] = r.x
            self.y[r.id] = r.y
            self.demand[r.id] = r.demand
            self.early[r.id] = r.early
            self.due[r.id] = r.due
            self.s_mean[r.id] = r.service_mean
            self.s_var[r.id] = r.service_var
        xs, ys = self.x, self.y
        self.dist = [[math.hypot(xs[i] - xs[j], ys[i] - ys[j]) for j in range(size)] for i in range(size)]

    def add_request(self, spec: RequestSpec) -> None:
        self.requests[spec.id] = spec
        self._build()

    def with_params(self, params: Params) -> "Network":
        other = object.__new__(Network)
        other.__dict__.update(self.__dict__)
        other.params = params
        return other

    def __contains__(self, node: int) -> bool:
        return node == 0 or node in self.requests


# -- routes ---------------------------------------------------------------------


@dataclass(frozen=True)
class Route:
    """One AMR's propagated plan.

    Per-stop tuples are aligned with ``stops``: arrival/departure moments,
    remaining load on arrival (``load``), the stop's demand and due date, and
    cumulative mean travel / expected lateness up to that stop.  The departure
    from the final depot is undefined and stored as ``inf``.
    """

    stops: tuple[int, ...]
    ready: tuple[float, ...]
    a_mean: tuple[float, ...]
    a_var: tuple[float, ...]
    d_mean: tuple[float, ...]
    d_var: tuple[float, ...]
    load: tuple[float, ...]
    demand: tuple[float, ...]
    due: tuple[float, ...]
    cum_travel: tuple[float, ...]
    cum_delay: tuple[float, ...]
    capacity: float
    psi: float
    eps: float
    cap_static_at: int | None
    cap_dynamic_at: int | None
    late_at: int | None
    amr: int = 0

    @property
    def travel(self) -> float:
        return self.cum_travel[-1]

    @property
    def delay(self) -> float:
        return self.cum_delay[-1]

    @property
    def arrival(self) -> list[GaussianTime]:
        return [GaussianTime(m, v) for m, v in zip(self.a_mean, self.a_var)]

    @property
    def departure(self) -> list[GaussianTime]:
        return [GaussianTime(m, v) for m, v in zip(self.d_mean, self.d_var)]

    @property
    def requests(self) -> list[int]:
        return [s for s in self.stops if s != 0]

    @property
    def n_requests(self) -> int:
        return len(self.stops) - self.stops.count(0)

    @property
    def is_empty(self) -> bool:
        return not any(self.stops)

    @cached_property
    def legs(self) -> tuple[dict[int, tuple[int, float]], dict[int, float]]:
        """``(request -> (predecessor, ready), last request -> ready of its depot return)``."""
        pred: dict[int, tuple[int, float]] = {}
        depot_in: dict[int, float] = {}
        old = self.stops
        for p in range(1, len(old)):
            s = old[p]
            if s == 0:
                depot_in[old[p - 1]] = self.ready[p]
            else:
                pred[s] = (old[p - 1], self.ready[p])
        return pred, depot_in

    def trips(self) -> list[list[int]]:
        out, cur = [], []
        for s in self.stops[1:]:
            if s == 0:
                out.append(cur)
                cur = []
            else:
                cur.append(s)
        return out

    def trip_of(self, pos: int) -> int:
        """0-based trip index that the leg leaving position ``pos`` belongs to."""
        return sum(1 for s in self.stops[1 : pos + 1] if s == 0)

    def cap_at(self, mode: Mode) -> int | None:
        return self.cap_static_at if mode is Mode.STATIC else self.cap_dynamic_at

    def path(self) -> str:
        return "-".join(str(s) for s in self.stops)


def _exempt(stops: Sequence[int], p: int) -> bool:
    # the leading request is served straight from the depot at the earliest
    # possible time; no re-planning can do better, so it never triggers repair
    return p == 1 or (p == 2 and stops[2] == 0)


def evaluate(
    stops: Sequence[int],
    net: Network,
    ready: Sequence[float] | None = None,
    amr: int = 0,
    base: Route | None = None,
    keep: int = 0,
) -> Route:
    """Propagate times and loads along ``stops`` and return the :class:`Route`.

    When ``base`` is given, its values for positions ``< keep`` are reused;
    the caller guarantees those positions (stops and ready epochs) match.
    """
    n = len(stops)
    if n < 2 or stops[0] != 0 or stops[-1] != 0:
        raise ValueError(f"route must start and end at the depot: {list(stops)}")
    if ready is None:
        ready = (0.0,) * n
    params = net.params
    Q = net.capacity
    floor_static = Q * params.psi
    tv = params.travel_var
    eps_bar = 1.0 - params.eps
    dist, early, due_t, dem = net.dist, net.early, net.due, net.demand
    sm, sv = net.s_mean, net.s_var

    if base is not None and keep >= 3 and base.psi == params.psi and base.eps == params.eps:
        start = keep
        am = list(base.a_mean[:start]) + [0.0] * (n - start)
        av = list(base.a_var[:start]) + [0.0] * (n - start)
        dm = list(base.d_mean[: start - 1]) + [0.0] * (n - start + 1)
        dv = list(base.d_var[: start - 1]) + [0.0] * (n - start + 1)
        load = list(base.load[:start]) + [0.0] * (n - start)
        ctr = list(base.cum_travel[:start]) + [0.0] * (n - start)
        cdl = list(base.cum_delay[:start]) + [0.0] * (n - start)
        cap_s = base.cap_static_at if base.cap_static_at is not None and base.cap_static_at < start else None
        cap_d = base.cap_dynamic_at if base.cap_dynamic_at is not None and base.cap_dynamic_at < start else None
        late = base.late_at if base.late_at is not None and base.late_at < start else None
        prev = stops[start - 1]
        u = Q if prev == 0 else load[start - 1] - dem[prev]
    else:
        start = 1
        am = [0.0] * n
        av = [0.0] * n
        dm = [0.0] * n
        dv = [0.0] * n
        load = [0.0] * n
        ctr = [0.0] * n
        cdl = [0.0] * n
        load[0] = Q
        cap_s = cap_d = late = None
        u = Q

    for p in range(start, n):
        i = stops[p - 1]
        j = stops[p]
        bm = am[p - 1] + sm[i]
        bv = av[p - 1] + sv[i]
        r = ready[p]
        if r > 0.0:
            bm, bv = _max_const(bm, bv, r)
        t = dist[i][j]
        ej = early[j]
        dm[p - 1], dv[p - 1] = _max_const(bm, bv, ej - t)
        mj, vj = _max_const(bm + t, bv + tv, ej)
        am[p] = mj
        av[p] = vj
        ctr[p] = ctr[p - 1] + t
        hj = due_t[j]
        if j == 0:
            u = Q
            load[p] = Q
            cdl[p] = cdl[p - 1]
        else:
            load[p] = u
            q = dem[j]
            rest = u - q
            if cap_d is None and rest < -_TOL:
                cap_d = p
            if cap_s is None and i != 0 and rest < floor_static - _TOL:
                cap_s = p
            u = rest
            cdl[p] = cdl[p - 1] + _lateness(mj, vj, hj)
        if late is None and p > 1 and not (p == 2 and stops[2] == 0) and _prob_before(mj, vj, hj) <= eps_bar:
            late = p
    dm[n - 1] = INF
    dv[n - 1] = 0.0
    return Route(
        tuple(stops),
        tuple(ready),
        tuple(am),
        tuple(av),
        tuple(dm),
        tuple(dv),
        tuple(load),
        tuple([dem[s] for s in stops]),
        tuple([due_t[s] for s in stops]),
        tuple(ctr),
        tuple(cdl),
        Q,
        params.psi,
        params.eps,
        cap_s,
        cap_d,
        late,
        amr,
    )


def make_route(stops: Sequence[int], net: Network, amr: int = 0, ready: Sequence[float] | None = None) -> Route:
    """Build a route from a stop list, adding the depot at either end if missing."""
    stops = list(stops)
    if not stops or stops[0] != 0:
        stops.insert(0, 0)
        if ready is not None:
            ready = [0.0] + list(ready)
    if stops[-1] != 0 or len(stops) == 1:
        stops.append(0)
        if ready is not None:
            ready = list(ready) + [0.0]
    return evaluate(stops, net, ready, amr)


def propagate(route: Route, net: Network) -> Route:
    return evaluate(route.stops, net, route.ready, route.amr)


def capacity_check(route: Route, Q: float, psi: float, mode: Mode) -> int | None:
    """Position of the first stop whose service breaks the load rule, or ``None``.

    STATIC requires ``u - q >= Q*psi`` after every stop except the first of a
    trip (a trip always carries at least one request); DYNAMIC only ``u - q >= 0``.
    """
    floor = Q * psi if mode is Mode.STATIC else 0.0
    u = Q
    for p in range(1, len(route.stops)):
        s = route.stops[p]
        if s == 0:
            u = Q
            continue
        rest = u - route.demand[p]
        first_in_trip = route.stops[p - 1] == 0
        if rest < -_TOL or (not first_in_trip and rest < floor - _TOL):
            return p
        u = rest
    return None


def lateness_risk(route: Route, eps: float) -> int | None:
    """First stop (request or depot return) whose on-time probability is ``<= 1 - eps``.

    The route's leading request, and the depot return right after it when it
    rides alone, are exempt: nothing can be planned earlier than a direct run.
    """
    if eps == route.eps:
        return route.late_at
    for p in range(1, len(route.stops)):
        if _exempt(route.stops, p):
            continue
        if _prob_before(route.a_mean[p], route.a_var[p], route.due[p]) <= 1.0 - eps:
            return p
    return None


def departed(route: Route, now: float) -> int:
    """Number of leading stops the AMR has already left at time ``now`` (by mean departure)."""
    k = 0
    last = len(route.stops) - 1
    while k < last and route.d_mean[k] <= now:
        k += 1
    return k


# -- solutions --------------------------------------------------------------------


@dataclass(frozen=True)
class CostBreakdown:
    travel: float = 0.0
    delay: float = 0.0
    fixed: float = 0.0
    rejection: float = 0.0

    @property
    def total(self) -> float:
        return self.travel + self.delay + self.fixed + self.rejection

    def __sub__(self, other: "CostBreakdown") -> "CostBreakdown":
        return CostBreakdown(
            self.travel - other.travel,
            self.delay - other.delay,
            self.fixed - other.fixed,
            self.rejection - other.rejection,
        )

    def as_dict(self) -> dict:
        return {
            "travel": self.travel,
            "delay": self.delay,
            "fixed": self.fixed,
            "rejection": self.rejection,
            "total": self.total,
        }


@dataclass(frozen=True)
class Solution:
    """Routes of the deployed AMRs plus rejected low-priority requests.

    ``now`` is the decision clock (0 during static planning) and
    ``max_amrs`` the fleet cap ``M``.
    """

    net: Network = field(repr=False, compare=False)
    routes: tuple[Route, ...] = ()
    rejected: frozenset[int] = frozenset()
    now: float = 0.0
    max_amrs: float = INF

    @property
    def m(self) -> int:
        return sum(1 for r in self.routes if not r.is_empty)

    @property
    def cost(self) -> CostBreakdown:
        return solution_cost(self)

    @property
    def total(self) -> float:
        return solution_cost(self).total

    def served(self) -> list[int]:
        return [s for r in self.routes for s in r.stops if s != 0]

    def locate(self, rid: int) -> tuple[int, int] | None:
        for k, r in enumerate(self.routes):
            for p, s in enumerate(r.stops):
                if s == rid:
                    return k, p
        return None

    def next_amr_id(self) -> int:
        return max((r.amr for r in self.routes), default=0) + 1

    def replace_routes(self, changes: dict[int, Route | None], added: Sequence[Route] = ()) -> "Solution":
        routes = []
        for k, r in enumerate(self.routes):
            if k in changes:
                r = changes[k]
                if r is None or r.is_empty:
                    continue
            routes.append(r)
        routes.extend(r for r in added if not r.is_empty)
        return Solution(self.net, tuple(routes), self.rejected, self.now, self.max_amrs)

    def with_(self, **kw) -> "Solution":
        d = dict(net=self.net, routes=self.routes, rejected=self.rejected, now=self.now, max_amrs=self.max_amrs)
        d.update(kw)
        return Solution(**d)


def route_total(route: Route, params: Params) -> float:
    fixed = params.fixed_cost if any(route.stops) else 0.0
    return params.travel_cost * route.cum_travel[-1] + params.delay_cost * route.cum_delay[-1] + fixed


def route_cost(route: Route, params: Params) -> CostBreakdown:
    fixed = params.fixed_cost if not route.is_empty else 0.0
    return CostBreakdown(params.travel_cost * route.travel, params.delay_cost * route.delay, fixed, 0.0)


def solution_cost(sol: Solution) -> CostBreakdown:
    p = sol.net.params
    travel = delay = 0.0
    used = 0
    for r in sol.routes:
        travel += r.travel
        delay += r.delay
        if not r.is_empty:
            used += 1
    return CostBreakdown(
        p.travel_cost * travel,
        p.delay_cost * delay,
        p.fixed_cost * used,
        p.rejection_cost * len(sol.rejected),
    )


def total_of(routes: Iterable[Route], n_rejected: int, params: Params) -> float:
    travel = delay = 0.0
    used = 0
    for r in routes:
        travel += r.travel
        delay += r.delay
        if not r.is_empty:
            used += 1
    return (
        params.travel_cost * travel
        + params.delay_cost * delay
        + params.fixed_cost * used
        + params.rejection_cost * n_rejected
    )


# -- editing ------------------------------------------------------------------------


def normalize_stops(stops: Sequence[int]) -> list[int]:
    """Drop repeated depot visits and make sure both ends are the depot."""
    out = [0]
    for s in stops:
        if s == 0 and out[-1] == 0:
            continue
        out.append(s)
    if out[-1] != 0:
        out.append(0)
    if len(out) == 1:
        out.append(0)
    return out


def rebuild(
    route: Route,
    new_stops: Sequence[int],
    net: Network,
    now: float = 0.0,
    new_ready: dict[int, float] | None = None,
) -> Route:
    """Re-evaluate ``route`` with an edited stop list.

    Legs that already existed keep their ``ready`` epoch; every new leg is
    stamped with ``now`` (or the request's own epoch from ``new_ready``).
    """
    old = route.stops
    pred, depot_in = route.legs
    ready = [route.ready[0]]
    for p in range(1, len(new_stops)):
        s = new_stops[p]
        before = new_stops[p - 1]
        if s == 0:
            r = depot_in.get(before)
            ready.append(r if r is not None else now)
        elif s in pred:
            pr, r = pred[s]
            ready.append(r if pr == before else max(r, now))
        else:
            ready.append(max((new_ready or {}).get(s, now), now))
    keep = 0
    lim = min(len(old), len(new_stops))
    while keep < lim and old[keep] == new_stops[keep] and route.ready[keep] == ready[keep]:
        keep += 1
    return evaluate(new_stops, net, ready, route.amr, base=route, keep=keep)


def fresh_route(stops: Sequence[int], net: Network, amr: int, now: float = 0.0,
                ready_of: dict[int, float] | None = None) -> Route:
    """Route for a newly deployed AMR leaving the depot no earlier than ``now``."""
    stops = normalize_stops(stops)
    ready = [0.0]
    for s in stops[1:]:
        r = now
        if ready_of and s in ready_of:
            r = max(r, ready_of[s])
        ready.append(r)
    return evaluate(stops, net, ready, amr)


def insert_stop(route: Route, pos: int, rid: int, net: Network, now: float = 0.0, epoch: float | None = None) -> Route:
    """Insert request ``rid`` right after position ``pos``."""
    if not 0 <= pos < len(route.stops):
        raise InfeasiblePosition(f"position {pos} outside route of length {len(route.stops)}")
    stops = list(route.stops)
    if pos == len(stops) - 1:
        stops = stops + [rid, 0]
    else:
        stops.insert(pos + 1, rid)
    ready = {rid: now if epoch is None else epoch}
    return rebuild(route, stops, net, now, ready)


def marginal_insert_cost(sol: Solution, rid: int, position: tuple[int, int], mode: Mode = Mode.DYNAMIC) -> float:
    """Cost change of inserting ``rid`` after stop ``position = (route k, stop index)``.

    ``k == len(sol.routes)`` opens a new AMR.  The capacity ledger is repaired
    by depot insertion before the cost is taken.
    """
    from .tabu import repair_overload

    k, pos = position
    net = sol.net
    if k == len(sol.routes):
        r = fresh_route([0, rid, 0], net, sol.next_amr_id(), sol.now, {rid: sol.now})
        after = sol.replace_routes({}, [r])
    else:
        route = sol.routes[k]
        if pos < departed(route, sol.now):
            raise InfeasiblePosition(f"stop {pos} of route {k} already departed")
        r = insert_stop(route, pos, rid, net, sol.now)
        r = repair_overload(r, net, mode, sol.now)
        if r.cap_at(mode) is not None:
            raise InfeasiblePosition("capacity cannot be restored")
        after = sol.replace_routes({k: r})
    return after.total - sol.total


# -- checks and I/O ----------------------------------------------------------------


class InvalidSolution(AssertionError):
    pass


def validate(sol: Solution, expected: Iterable[int] | None = None) -> None:
    """Structural check of a solution; raises :class:`InvalidSolution`."""
    seen: dict[int, int] = {}
    for k, r in enumerate(sol.routes):
        if r.stops[0] != 0 or r.stops[-1] != 0:
            raise InvalidSolution(f"route {k} does not start and end at the depot")
        for a, b in zip(r.stops, r.stops[1:]):
            if a == 0 and b == 0 and len(r.stops) > 2:
                raise InvalidSolution(f"route {k} has an empty trip")
        for s in r.stops:
            if s == 0:
                continue
            if s in seen:
                raise InvalidSolution(f"request {s} served twice")
            seen[s] = k
        again = propagate(r, sol.net)
        if again != r:
            raise InvalidSolution(f"route {k} is not consistently propagated")
    both = set(seen) & set(sol.rejected)
    if both:
        raise InvalidSolution(f"requests both served and rejected: {sorted(both)}")
    if sol.m > sol.max_amrs:
        raise InvalidSolution(f"{sol.m} AMRs deployed, cap is {sol.max_amrs}")
    if expected is not None:
        expected = set(expected)
        got = set(seen) | set(sol.rejected)
        if got != expected:
            raise InvalidSolution(
                f"request set mismatch: missing {sorted(expected - got)}, extra {sorted(got - expected)}"
            )


def solution_to_dict(sol: Solution, dynamic: Iterable[int] = ()) -> dict:
    dyn = set(dynamic)

    def label(s: int) -> str:
        return f"{s}*" if s in dyn else str(s)

    return {
        "routes": [
            {"amr": r.amr, "stops": list(r.stops), "path": "-".join(label(s) for s in r.stops)}
            for r in sol.routes
        ],
        "rejected": sorted(sol.rejected),
        "m": sol.m,
        "cost": sol.cost.as_dict(),
    }


def solution_from_dict(data: dict, net: Network, max_amrs: float = INF) -> Solution:
    routes = tuple(make_route(r["stops"], net, r.get("amr", k + 1)) for k, r in enumerate(data["routes"]))
    return Solution(net, routes, frozenset(data.get("rejected", ())), 0.0, max_amrs)
