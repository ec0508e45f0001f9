"""Stage-1 planner: greedy construction and tabu search over multi-trip routes.

Neighbourhoods (every candidate is repaired before it is scored):

* ``SWAP``     exchange two requests, same route or different routes;
* ``TWO_OPT``  reverse the segment between two requests of one route, or
               exchange the tails of two routes after a request or after the
               starting depot (the latter can merge two routes into one);
* ``RELOCATE`` move a request in front of another request, or behind the last
               request of a trip.

Repairs: an overloaded trip gets a depot visit before the first stop it
cannot serve; a route at risk of lateness is split, the tail going to a new
AMR.  Moves never touch stops the AMR has already left (``Solution.now``).
"""

from __future__ import annotations

import enum
import heapq
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .routing import (
    INF,
    Mode,
    Network,
    Route,
    Solution,
    departed,
    fresh_route,
    normalize_stops,
    rebuild,
    route_cost,
    route_total,
)

log = logging.getLogger(__name__)

# neighbourhoods above this many requests are sampled, not enumerated
FULL_ENUMERATION_LIMIT = 200


class Operator(enum.IntEnum):
    SWAP = 0
    TWO_OPT = 1
    RELOCATE = 2


class RepairUnavailable(RuntimeError):
    """Splitting a route needs another AMR but the fleet is at its cap."""


# -- construction -------------------------------------------------------------------


def greedy_initial(net: Network, request_ids: Iterable[int], mode: Mode = Mode.STATIC) -> Solution:
    """Earliest-window-first greedy.

    Requests are taken by ascending window start; each goes to the end of the
    existing route where it is cheapest to append without breaking the load
    rule or the lateness threshold, otherwise to a new AMR.
    """
    order = sorted(request_ids, key=lambda r: (net.early[r], r))
    routes: list[Route] = []
    params = net.params
    for rid in order:
        best = None
        for k, route in enumerate(routes):
            cand = rebuild(route, list(route.stops[:-1]) + [rid, 0], net)
            if cand.cap_at(mode) is not None or cand.late_at is not None:
                continue
            delta = route_cost(cand, params).total - route_cost(route, params).total
            if best is None or delta < best[0]:
                best = (delta, k, cand)
        if best is None:
            routes.append(fresh_route([0, rid, 0], net, amr=len(routes) + 1))
        else:
            routes[best[1]] = best[2]
    return Solution(net, tuple(routes))


# -- repairs --------------------------------------------------------------------------


def repair_overload(route: Route, net: Network, mode: Mode = Mode.DYNAMIC, now: float = 0.0) -> Route:
    """Insert a depot visit before each stop the trip can no longer serve."""
    while True:
        p = route.cap_at(mode)
        if p is None:
            return route
        stops = list(route.stops)
        stops.insert(p, 0)
        route = rebuild(route, stops, net, now)


def _split_at(route: Route, lock: int) -> int | None:
    s = route.late_at
    if s is None:
        return None
    if route.stops[s] == 0:
        s -= 1
    if s <= lock or s <= 1:
        return None
    return s


def _split(route: Route, s: int, net: Network, now: float, new_amr: int) -> tuple[Route, Route]:
    head = rebuild(route, normalize_stops(route.stops[:s]), net, now)
    tail = rebuild(route, [0] + list(route.stops[s:]), net, now)
    return head, replace(tail, amr=new_amr)


def split_routes(
    routes: Sequence[Route], net: Network, now: float, spare: float, next_amr: int
) -> tuple[list[Route], list[Route]]:
    """Split late routes while AMRs are available.

    Returns ``(updated, added)``: ``updated`` aligned with ``routes``, and the
    new AMR routes.  Raises :class:`RepairUnavailable` if a split is needed
    and ``spare`` is exhausted; violations that cannot be split (frozen or
    exempt stops) are left in place.
    """
    updated = list(routes)
    added: list[Route] = []
    work = [(True, i) for i in range(len(updated))]
    while work:
        orig, i = work.pop()
        r = updated[i] if orig else added[i]
        s = _split_at(r, departed(r, now) if now > 0 else 0)
        if s is None:
            continue
        if spare < 1:
            raise RepairUnavailable(f"no AMR left to split route {r.amr}")
        spare -= 1
        head, tail = _split(r, s, net, now, next_amr)
        next_amr += 1
        if orig:
            updated[i] = head
        else:
            added[i] = head
        added.append(tail)
        work.append((orig, i))
        work.append((False, len(added) - 1))
    return updated, added


def repair_timewindow(sol: Solution, k: int) -> Solution:
    """Split route ``k`` before its first late stop; the tail goes to a new AMR.

    Repeats on the pieces until no splittable violation is left.
    """
    route = sol.routes[k]
    if route.late_at is None:
        return sol
    updated, added = split_routes([route], sol.net, sol.now, sol.max_amrs - sol.m, sol.next_amr_id())
    return sol.replace_routes({k: updated[0]}, added)


# -- neighbourhoods --------------------------------------------------------------------


@dataclass
class Neighbor:
    """One repaired candidate: ``changes`` maps route index to its new route."""

    move: tuple[int, int]
    total: float
    changes: dict[int, Route | None]
    added: list[Route]
    base: Solution = field(repr=False)

    @property
    def solution(self) -> Solution:
        return self.base.replace_routes(self.changes, self.added)


def _movable(sol: Solution) -> tuple[list[int], list[tuple[int, int, int]]]:
    locks = [departed(r, sol.now) if sol.now > 0 else 0 for r in sol.routes]
    items = []
    for k, r in enumerate(sol.routes):
        for p in range(max(locks[k], 0) + 1, len(r.stops) - 1):
            if r.stops[p] != 0:
                items.append((r.stops[p], k, p))
    return locks, items


def _raw_moves(sol: Solution, op: Operator, locks, items) -> list[tuple[tuple[int, int], dict[int, list[int]]]]:
    """All moves of ``op`` as ``(pair, {route index: new stop list})`` before repair."""
    routes = sol.routes
    out = []
    if op is Operator.SWAP:
        for x in range(len(items)):
            a, ka, pa = items[x]
            for y in range(x + 1, len(items)):
                b, kb, pb = items[y]
                if ka == kb:
                    st = list(routes[ka].stops)
                    st[pa], st[pb] = b, a
                    out.append(((a, b), {ka: st}))
                else:
                    s1 = list(routes[ka].stops)
                    s2 = list(routes[kb].stops)
                    s1[pa], s2[pb] = b, a
                    out.append(((a, b), {ka: s1, kb: s2}))
    elif op is Operator.TWO_OPT:
        # a depot anchor (id 0, position 0) hands the other route this whole route as its tail
        anchors = []
        for k, r in enumerate(routes):
            if locks[k] == 0 and len(routes) > 1:
                anchors.append((0, k, 0))
            for p in range(max(locks[k], 1), len(r.stops) - 1):
                if r.stops[p] != 0:
                    anchors.append((r.stops[p], k, p))
        for x in range(len(anchors)):
            a, ka, pa = anchors[x]
            for y in range(x + 1, len(anchors)):
                b, kb, pb = anchors[y]
                if ka == kb and (a == 0 or b == 0):
                    continue
                if a == 0 and b == 0:
                    continue
                if ka == kb:
                    if pa <= locks[ka]:
                        continue
                    st = list(routes[ka].stops)
                    st[pa : pb + 1] = st[pa : pb + 1][::-1]
                    out.append(((a, b), {ka: st}))
                else:
                    s1 = routes[ka].stops
                    s2 = routes[kb].stops
                    if pa == len(s1) - 2 and pb == len(s2) - 2:
                        continue
                    n1 = list(s1[: pa + 1]) + list(s2[pb + 1 :])
                    n2 = list(s2[: pb + 1]) + list(s1[pa + 1 :])
                    out.append(((a, b), {ka: normalize_stops(n1), kb: normalize_stops(n2)}))
    else:
        for a, ka, pa in items:
            src = routes[ka].stops
            removed = normalize_stops(list(src[:pa]) + list(src[pa + 1 :]))
            for kb, r in enumerate(routes):
                if kb == ka:
                    if len(removed) <= 2:
                        continue
                    st = removed
                else:
                    st = r.stops
                lock = locks[kb]
                for q in range(lock + 1, len(st) - 1):
                    b = st[q]
                    if b == 0:
                        continue
                    slots = [q]
                    if st[q + 1] == 0:
                        slots.append(q + 1)
                    for at in slots:
                        new = list(st[:at]) + [a] + list(st[at:])
                        if kb == ka:
                            if tuple(new) == src:
                                continue
                            out.append(((a, b), {ka: new}))
                        else:
                            out.append(((a, b), {ka: removed, kb: new}))
    return out


@dataclass
class _Pending:
    """A candidate whose late routes still need splitting; ``bound`` is a lower bound."""

    move: tuple[int, int]
    bound: float
    idx: list[int]
    routes: list[Route | None]
    spare: float


def _stage(
    sol: Solution,
    pair: tuple[int, int],
    changes_raw: dict[int, list[int]],
    mode: Mode,
    strict: bool,
    base_total: float,
) -> Neighbor | _Pending | None:
    """Apply a raw move and the overload repair; defer any split repair."""
    net = sol.net
    params = net.params
    now = sol.now
    idx = list(changes_raw)
    new_routes: list[Route | None] = []
    total = base_total
    late = False
    for k in idx:
        st = changes_raw[k]
        old = sol.routes[k]
        total -= route_total(old, params)
        if len(st) <= 2:
            new_routes.append(None)
            continue
        r = rebuild(old, st, net, now)
        if r.cap_at(mode) is not None:
            r = repair_overload(r, net, mode, now)
        total += route_total(r, params)
        late = late or r.late_at is not None
        new_routes.append(r)
    if not late:
        return Neighbor(pair, total, dict(zip(idx, new_routes)), [], sol)
    removed = sum(1 for r in new_routes if r is None)
    spare = sol.max_amrs - (sol.m - removed)
    if spare < 1:
        return None if strict else Neighbor(pair, total, dict(zip(idx, new_routes)), [], sol)
    # splitting never shortens travel (triangle inequality) and adds one AMR
    # per split; the delay of the split routes is all that may disappear
    bound = total
    splittable = False
    for r in new_routes:
        if r is not None and r.late_at is not None:
            bound -= params.delay_cost * r.delay
            if not splittable and _split_at(r, departed(r, now) if now > 0 else 0) is not None:
                splittable = True
    if splittable:
        bound += params.fixed_cost
    elif strict:
        return None
    # a split at a trip boundary leaves travel unchanged, so keep rounding slack
    bound -= 1e-9 * max(1.0, abs(bound))
    return _Pending(pair, bound, idx, new_routes, spare)


def _finish(sol: Solution, pend: _Pending, strict: bool, base_total: float, next_amr: int) -> Neighbor | None:
    params = sol.net.params
    live = [r for r in pend.routes if r is not None]
    try:
        fixed, added = split_routes(live, sol.net, sol.now, pend.spare, next_amr)
    except RepairUnavailable:
        if strict:
            return None
        fixed, added = live, []
    if strict and any(r.late_at is not None for r in fixed + added):
        return None
    it = iter(fixed)
    routes = [None if r is None else next(it) for r in pend.routes]
    total = base_total
    for k, r in zip(pend.idx, routes):
        total -= route_total(sol.routes[k], params)
        if r is not None:
            total += route_total(r, params)
    for r in added:
        total += route_total(r, params)
    return Neighbor(pend.move, total, dict(zip(pend.idx, routes)), added, sol)


def _candidates(sol: Solution, op: Operator, mode: Mode, strict: bool, rng) -> list:
    locks, items = _movable(sol)
    moves = _raw_moves(sol, op, locks, items)
    if len(items) > FULL_ENUMERATION_LIMIT:
        cap = math.ceil(len(items) ** 2 / 4)
        if len(moves) > cap:
            rng = rng or np.random.default_rng(0)
            pick = sorted(rng.choice(len(moves), size=cap, replace=False))
            moves = [moves[i] for i in pick]
    base_total = sol.total
    out = []
    for pair, raw in moves:
        c = _stage(sol, pair, raw, mode, strict, base_total)
        if c is not None:
            out.append(c)
    return out


class _Ranked:
    """Candidates in ``(total, move)`` order, splitting deferred ones on demand."""

    def __init__(self, sol: Solution, cands: list, strict: bool):
        self.sol = sol
        self.strict = strict
        self.base_total = sol.total
        self.next_amr = sol.next_amr_id()
        self.heap = []
        for seq, c in enumerate(cands):
            key = c.total if isinstance(c, Neighbor) else c.bound
            self.heap.append((key, c.move, seq, c))
        heapq.heapify(self.heap)

    def pop(self) -> Neighbor | None:
        heap = self.heap
        while heap:
            _, _, seq, c = heapq.heappop(heap)
            if isinstance(c, Neighbor):
                return c
            done = _finish(self.sol, c, self.strict, self.base_total, self.next_amr)
            if done is not None:
                heapq.heappush(heap, (done.total, done.move, seq, done))
        return None


def neighbors(
    sol: Solution,
    op: Operator,
    mode: Mode = Mode.STATIC,
    strict: bool = True,
    rng: np.random.Generator | None = None,
) -> list[Neighbor]:
    """Scored, repaired neighbours of ``sol`` under ``op`` in ``(total, move)`` order."""
    ranked = _Ranked(sol, _candidates(sol, op, mode, strict, rng), strict)
    out = []
    while (nb := ranked.pop()) is not None:
        out.append(nb)
    return out


def generate_neighborhood(
    sol: Solution, operator: Operator, mode: Mode = Mode.STATIC, strict: bool = True
) -> list[tuple[tuple[int, int], Solution]]:
    return [(nb.move, nb.solution) for nb in neighbors(sol, operator, mode, strict)]


# -- tabu search ------------------------------------------------------------------------


@dataclass
class TabuState:
    """Tabu matrices, operator weights and search settings."""

    size: int
    iterations: int = 500
    tenure: tuple[int, int] = (40, 50)
    reward_best: float = 2.0
    reward_other: float = 0.5
    refresh_every: int = 10
    weights: np.ndarray = field(default_factory=lambda: np.ones(3))
    tabu: np.ndarray = None
    probs: np.ndarray = None
    ite: int = 0

    def __post_init__(self):
        if self.tabu is None:
            self.tabu = np.zeros((3, self.size, self.size), dtype=np.int64)
        if self.probs is None:
            self.probs = self.weights / self.weights.sum()
        lo, hi = self.tenure
        if not 0 < lo <= hi:
            raise ValueError(f"bad tenure range {self.tenure}")
        if not self.reward_best > 0 or not self.reward_other > 0:
            raise ValueError("rewards must be positive")

    @classmethod
    def for_network(cls, net: Network, **kw) -> "TabuState":
        return cls(net.size, **kw)

    def pick(self, rng: np.random.Generator) -> Operator:
        u = rng.random()
        acc = 0.0
        for i, p in enumerate(self.probs):
            acc += p
            if u < acc:
                return Operator(i)
        return Operator.RELOCATE

    def draw_tenure(self, rng: np.random.Generator) -> int:
        lo, hi = self.tenure
        return int(rng.integers(lo, hi + 1))

    def is_tabu(self, op: Operator, pair: tuple[int, int]) -> bool:
        return self.tabu[op, pair[0], pair[1]] != 0

    def _set(self, op: int, a: int, b: int, v: int) -> None:
        self.tabu[op, a, b] = v
        self.tabu[op, b, a] = v

    def on_improvement(self, op: Operator, pair: tuple[int, int], rng: np.random.Generator) -> None:
        a, b = pair
        self.weights[op] += self.reward_best
        B = self.tabu[op]
        if B[a, b] != 0:
            self._set(op, a, b, 0)
        else:
            self._set(op, a, b, self.draw_tenure(rng))
        row = B[a].copy()
        row[b] = 0
        hit = np.nonzero(row)[0]
        B[a, hit] -= 1
        B[hit, a] = B[a, hit]

    def on_move(self, op: Operator, pair: tuple[int, int], rng: np.random.Generator) -> None:
        a, b = pair
        self.weights[op] += self.reward_other
        B = self.tabu[op]
        np.subtract(B, 1, out=B, where=B > 0)
        self._set(op, a, b, self.draw_tenure(rng))

    def age(self, op: Operator) -> None:
        """Every candidate was tabu: no move, but the tenures still run down."""
        B = self.tabu[op]
        np.subtract(B, 1, out=B, where=B > 0)

    def tick(self) -> None:
        self.ite += 1
        if self.ite % self.refresh_every == 0:
            self.probs = self.weights / self.weights.sum()


@dataclass
class TraceRow:
    iteration: int
    operator: str
    current: float
    best: float


def tabu_search(
    initial: Solution,
    state: TabuState | None = None,
    rng: np.random.Generator | int | None = None,
    mode: Mode = Mode.STATIC,
    strict: bool = True,
    trace: list | None = None,
    monitor: Callable[[int, Solution, Solution], None] | None = None,
) -> Solution:
    """Adaptive tabu search; returns the best solution found.

    ``strict`` discards candidates that stay late after repair; with
    ``strict=False`` (used when polishing a capped dynamic plan) lateness is
    only penalised through the objective.
    """
    if state is None:
        state = TabuState.for_network(initial.net)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    current = best = initial
    best_total = cur_total = initial.total
    for _ in range(state.iterations):
        op = state.pick(rng)
        ranked = _Ranked(current, _candidates(current, op, mode, strict, rng), strict)
        top = ranked.pop()
        if top is not None:
            if top.total < best_total - 1e-9:
                current = best = top.solution
                cur_total = best_total = top.total
                state.on_improvement(op, top.move, rng)
            else:
                nb = top
                while nb is not None and state.is_tabu(op, nb.move):
                    nb = ranked.pop()
                if nb is not None:
                    current = nb.solution
                    cur_total = nb.total
                    state.on_move(op, nb.move, rng)
                else:
                    state.age(op)
        if trace is not None:
            trace.append(TraceRow(state.ite + 1, op.name, cur_total, best_total))
        if monitor is not None:
            monitor(state.ite + 1, current, best)
        state.tick()
    return best


def plan_static(
    net: Network,
    request_ids: Iterable[int],
    iterations: int = 500,
    seed: int | None = 0,
    tenure: tuple[int, int] = (40, 50),
    trace: list | None = None,
) -> Solution:
    """Greedy start followed by tabu search, the stage-1 planner."""
    init = greedy_initial(net, request_ids, Mode.STATIC)
    state = TabuState.for_network(net, iterations=iterations, tenure=tenure)
    return tabu_search(init, state, np.random.default_rng(seed), Mode.STATIC, True, trace)
