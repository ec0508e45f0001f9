import math

import numpy as np
import pytest

from amrdispatch.eiadr import (
    Accept,
    DecisionRecord,
    InsertionScheme,
    Reject,
    assign_high_priority,
    decide_low_priority,
    find_insertion_points,
    forced_schemes,
    insert_dynamic,
    read_timeline,
    write_timeline,
)
from amrdispatch.instance import Priority, RequestSpec
from amrdispatch.routing import Network, Params, Solution, departed, make_route, validate
from conftest import figure1, random_network

# 8:45 and 8:52 in minutes from midnight
T8, T9 = 525.0, 532.0


def scheme(route, cost, added_delay=0.0, trip=0, pred=1):
    return InsertionScheme(route, trip, pred, 1, cost, False, added_delay)


def test_figure1_request_8_goes_after_2_on_amr1(fig1):
    net, sol = fig1
    schemes = find_insertion_points(8, sol, T8)
    assert schemes
    best = assign_high_priority(schemes)
    assert best.route == 0 and best.predecessor == 2
    after, rec = insert_dynamic(8, sol, T8, Priority.HIGH)
    assert rec.action == "insert" and rec.route == 1 and rec.predecessor == 2
    assert after.routes[0].stops == (0, 1, 2, 8, 3, 0)
    assert after.routes[1] == sol.routes[1]


def test_figure1_request_9_rejected(fig1):
    net, sol = fig1
    sol, _ = insert_dynamic(8, sol, T8, Priority.HIGH)
    assert sol.m == sol.max_amrs
    best = assign_high_priority(find_insertion_points(9, sol, T9))
    assert best is not None and best.added_delay > 1.0
    after, rec = insert_dynamic(9, sol, T9, Priority.LOW)
    assert rec.action == "reject" and rec.route is None
    assert after.rejected == {9}
    assert after.total == pytest.approx(sol.total + 1.0, abs=1e-9)


def test_rule1_with_stated_penalty():
    # a 10-minute overrun at unit delay cost against a unit rejection loss
    assert isinstance(decide_low_priority(scheme(0, 12.0, added_delay=10.0), 1.0), Reject)
    assert isinstance(decide_low_priority(scheme(0, 12.0, added_delay=0.0), 1.0), Accept)
    assert isinstance(decide_low_priority(None, 1.0), Reject)
    # strict: equal penalty is a rejection
    assert isinstance(decide_low_priority(scheme(0, 1.0, added_delay=1.0), 1.0), Reject)


def test_assignment_tie_break():
    s = [scheme(1, 120.0), scheme(3, 80.0), scheme(2, 80.0)]
    assert assign_high_priority(s).route == 2
    assert assign_high_priority(s[:1]) is s[0]
    assert assign_high_priority([]) is None


def test_low_request_accepted_when_penalty_below_loss(fig1):
    net, sol = fig1
    net.add_request(RequestSpec(10, 0, -90, 10, 600, 700, 5, 0))
    after, rec = insert_dynamic(10, sol, 540.0, Priority.LOW)
    assert rec.action == "insert" and rec.route == 2
    assert after.rejected == frozenset()


def test_unreachable_request_only_gets_new_amr_scheme():
    reqs = [RequestSpec(1, 100, 0, 5, 100, 200, 5, 0), RequestSpec(2, 0, 10, 5, 0, 25, 5, 0)]
    net = Network((0, 0), reqs, 100, (0, 1000), Params(travel_var=0.0))
    sol = Solution(net, (make_route([0, 1, 0], net, 1),), max_amrs=2)
    now = 10.0
    schemes = find_insertion_points(2, sol, now)
    assert [s.new_amr for s in schemes] == [True]
    after, rec = insert_dynamic(2, sol, now, Priority.HIGH)
    assert rec.new_amr and rec.route == 2 and rec.action == "insert"
    assert after.routes[1].stops == (0, 2, 0)
    assert after.routes[0] == sol.routes[0]
    at_cap = sol.with_(max_amrs=1)
    assert find_insertion_points(2, at_cap, now) == []
    forced, rec = insert_dynamic(2, at_cap, now, Priority.HIGH)
    assert rec.action == "forced" and forced.m == 1 and 2 in forced.routes[0].stops
    rej, rec = insert_dynamic(2, at_cap, now, Priority.LOW)
    assert rec.action == "reject" and rej.rejected == {2}


def test_bad_requests():
    net, sol = figure1()
    with pytest.raises(KeyError):
        insert_dynamic(99, sol, T8)
    with pytest.raises(ValueError):
        insert_dynamic(1, sol, T8)


def _screen_oracle(sol, rid, now):
    """Deterministic screen by hand: finish + travel strictly before due, arrival before departure."""
    net = sol.net
    out = set()
    for k, r in enumerate(sol.routes):
        for p in range(len(r.stops)):
            if r.d_mean[p] <= now:
                continue
            j = r.stops[p]
            if r.a_mean[p] + net.s_mean[j] + net.dist[j][rid] < net.due[rid]:
                out.add((k, p))
    return out


@pytest.mark.parametrize("seed", range(5))
def test_deterministic_screen_matches_slot_enumeration(seed):
    net = random_network(seed, 10, det=True)
    rng = np.random.default_rng(seed)
    order = [int(i) for i in rng.permutation(range(1, 9))]
    sol = Solution(net, (make_route([0] + order[:4] + [0], net, 1), make_route([0] + order[4:] + [0], net, 2)),
                   max_amrs=2)
    now = float(rng.uniform(0, 150))
    for rid in (9, 10):
        got = {(s.route, s.position) for s in find_insertion_points(rid, sol, now)}
        assert got == _screen_oracle(sol, rid, now)


def _exhaustive_min(sol, rid, now):
    net = sol.net
    best = math.inf
    for k, r in enumerate(sol.routes):
        for p in range(departed(r, now), len(r.stops)):
            stops = list(r.stops)
            stops.insert(p + 1, rid)
            if p == len(stops) - 2:
                stops.append(0)
            routes = list(sol.routes)
            routes[k] = make_route(stops, net, r.amr)
            best = min(best, Solution(net, tuple(routes)).total)
    return best - sol.total


@pytest.mark.parametrize("seed", range(4))
def test_forced_assignment_is_exhaustive_minimum(seed):
    net = random_network(50 + seed, 20, det=True)
    ids = list(range(1, 20))
    rng = np.random.default_rng(seed)
    rng.shuffle(ids)
    chunks = [ids[i::3] for i in range(3)]
    routes = tuple(make_route([0] + sorted(c, key=lambda i: net.early[i]) + [0], net, k + 1)
                   for k, c in enumerate(chunks))
    sol = Solution(net, routes, max_amrs=3)
    best = assign_high_priority(forced_schemes(20, sol, 0.0))
    assert best.marginal_cost == pytest.approx(_exhaustive_min(sol, 20, 0.0), abs=1e-9)


def test_coherence_totality_and_frozen_prefix():
    net = random_network(11, 12, det=False, capacity=90, psi=0.1)
    ids = list(range(1, 9))
    sol = Solution(net, (make_route([0, 1, 2, 3, 4, 0], net, 1), make_route([0, 5, 6, 7, 8, 0], net, 2)),
                   max_amrs=3)
    for rid, now, pri in [(9, 40.0, Priority.HIGH), (10, 70.0, Priority.LOW), (11, 90.0, Priority.LOW),
                          (12, 120.0, Priority.HIGH)]:
        locks = {r.amr: departed(r, now) for r in sol.routes}
        after, rec = insert_dynamic(rid, sol, now, pri)
        assert after.total == pytest.approx(sol.total + rec.marginal_cost, abs=1e-9)
        placed = after.locate(rid) is not None
        assert placed != (rid in after.rejected)
        if pri is Priority.HIGH:
            assert placed
        by_amr = {r.amr: r for r in after.routes}
        for r in sol.routes:
            lock = locks[r.amr]
            new = by_amr[r.amr]
            assert new.stops[:lock] == r.stops[:lock]
            assert new.a_mean[:lock] == r.a_mean[:lock] and new.d_mean[:lock] == r.d_mean[:lock]
        ids.append(rid)
        validate(after, ids)
        sol = after


def test_timeline_round_trip(tmp_path):
    net, sol = figure1()
    sol, r1 = insert_dynamic(8, sol, T8, Priority.HIGH)
    sol, r2 = insert_dynamic(9, sol, T9, Priority.LOW)
    p = tmp_path / "timeline.jsonl"
    write_timeline([r1, r2], p)
    back = read_timeline(p)
    assert back == [r1, r2]
    assert isinstance(back[0], DecisionRecord)
    lines = p.read_text().splitlines()
    assert len(lines) == 2 and '"action": "reject"' in lines[1]
