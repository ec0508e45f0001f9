"""Invariant suite under generated inputs.

Every property bumps ``CASES`` once per generated example so the acceptance
run can check how many cases were exercised in total.
"""

from collections import Counter
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amrdispatch.eiadr import insert_dynamic
from amrdispatch.instance import Priority, dynamize
from amrdispatch.routing import (
    InfeasiblePosition,
    Mode,
    Solution,
    departed,
    insert_stop,
    make_route,
    marginal_insert_cost,
    normalize_stops,
    route_cost,
    validate,
)
from amrdispatch.synthetic import synthetic_instance
from amrdispatch.tabu import Operator, TabuState, repair_overload
from conftest import random_network

CASES: Counter = Counter()

seeds = st.integers(0, 2**16)
kinds = st.sampled_from(["C1", "C2", "R1", "R2", "RC1", "RC2"])


@st.composite
def plans(draw, n=8):
    """Random network plus a random split of its first ``n - 2`` requests over 1-3 routes."""
    seed = draw(seeds)
    det = draw(st.booleans())
    psi = draw(st.sampled_from([0.0, 0.2, 0.5]))
    net = random_network(seed, n, det=det, capacity=draw(st.sampled_from([40.0, 80.0, 1e6])), psi=psi)
    order = draw(st.permutations(list(range(1, n - 1))))
    cuts = sorted(draw(st.lists(st.integers(1, n - 3), max_size=2, unique=True)))
    parts = [list(order[a:b]) for a, b in zip([0] + cuts, cuts + [n - 2])]
    routes = tuple(make_route([0] + p + [0], net, k + 1) for k, p in enumerate(parts))
    rejected = frozenset(draw(st.sets(st.sampled_from(list(order)), max_size=1)))
    routes = tuple(make_route(normalize_stops([s for s in r.stops if s not in rejected]), net, r.amr) for r in routes)
    return net, Solution(net, tuple(r for r in routes if not r.is_empty), rejected)


@settings(max_examples=200)
@given(kinds, st.integers(0, 60), st.floats(0, 0.95), st.floats(0, 1), seeds)
def test_partition(kind, n, delta, hf, seed):
    CASES["partition"] += 1
    inst = synthetic_instance(kind, n, seed % 5)
    d = dynamize(inst, delta, hf, seed)
    static = [r.id for r in d.static_part.requests]
    dyn = [ev.request.id for ev in d.events]
    assert sorted(static + dyn) == sorted(r.id for r in inst.requests)
    assert len(set(static + dyn)) == inst.n


@settings(max_examples=200)
@given(plans(), st.sampled_from(list(Mode)))
def test_idempotence(plan, mode):
    CASES["idempotence"] += 1
    net, sol = plan
    for r in sol.routes:
        once = repair_overload(r, net, mode)
        assert repair_overload(once, net, mode) == once
        assert normalize_stops(normalize_stops(r.stops)) == normalize_stops(r.stops)
        assert make_route(r.stops, net, r.amr) == r


@settings(max_examples=200)
@given(plans())
def test_cost_additivity(plan):
    CASES["additivity"] += 1
    net, sol = plan
    per = sum(route_cost(r, net.params).total for r in sol.routes)
    assert sol.total == pytest.approx(per + net.params.rejection_cost * len(sol.rejected), rel=1e-12, abs=1e-9)


@settings(max_examples=150)
@given(plans(), st.data())
def test_marginal_exactness(plan, data):
    CASES["marginal"] += 1
    net, sol = plan
    rid = max(net.requests)
    k = data.draw(st.integers(0, len(sol.routes)))
    if k == len(sol.routes):
        pos = 0
        after = sol.replace_routes({}, [make_route([0, rid, 0], net, sol.next_amr_id())])
    else:
        r = sol.routes[k]
        pos = data.draw(st.integers(departed(r, sol.now), len(r.stops) - 1))
        fixed = repair_overload(insert_stop(r, pos, rid, net), net, Mode.DYNAMIC)
        if fixed.cap_at(Mode.DYNAMIC) is not None:
            with pytest.raises(InfeasiblePosition):
                marginal_insert_cost(sol, rid, (k, pos), Mode.DYNAMIC)
            return
        after = sol.replace_routes({k: fixed})
    c = marginal_insert_cost(sol, rid, (k, pos), Mode.DYNAMIC)
    # re-evaluate every route from its stop list alone
    fresh = Solution(net, tuple(make_route(r.stops, net, r.amr) for r in after.routes), after.rejected)
    assert c == pytest.approx(fresh.total - sol.total, abs=1e-7)


@settings(max_examples=150)
@given(st.integers(2, 12), seeds, st.lists(st.tuples(st.sampled_from(list(Operator)), st.integers(0, 11),
                                                     st.integers(0, 11), st.booleans()), max_size=40))
def test_tabu_matrix_symmetry(size, seed, moves):
    CASES["tabu"] += 1
    state = TabuState(size, tenure=(3, 7))
    rng = np.random.default_rng(seed)
    for op, i, j, improved in moves:
        i, j = i % size, j % size
        if i == j:
            continue
        if improved:
            state.on_improvement(op, (i, j), rng)
        else:
            state.on_move(op, (i, j), rng)
        state.tick()
        B = state.tabu
        assert (B == B.transpose(0, 2, 1)).all()
        assert (B >= 0).all() and (B <= 7).all()
        assert abs(state.probs.sum() - 1) < 1e-12 and (state.probs > 0).all()


def _arrivals(data, net, ids):
    times = sorted(data.draw(st.lists(st.floats(1, 250), min_size=len(ids), max_size=len(ids))))
    pris = data.draw(st.lists(st.sampled_from(list(Priority)), min_size=len(ids), max_size=len(ids)))
    return list(zip(ids, times, pris))


def _replay(sol, events):
    out = []
    for rid, t, pri in events:
        sol, rec = insert_dynamic(rid, sol, t, pri)
        out.append(rec)
    return sol, out


@settings(max_examples=100)
@given(plans(10), st.integers(1, 3), st.data())
def test_accounting_closure(plan, cap_extra, data):
    CASES["closure"] += 1
    net, sol = plan
    sol = sol.with_(max_amrs=sol.m + cap_extra - 1 if sol.m else cap_extra)
    events = _arrivals(data, net, [9, 10])
    final, recs = _replay(sol, events)
    assert final.total == pytest.approx(sol.total + sum(r.marginal_cost for r in recs), abs=1e-6)
    validate(final, list(range(1, 11)))
    for (rid, _, pri), rec in zip(events, recs):
        assert (rid in final.rejected) == (rec.action == "reject")
        if pri is Priority.HIGH:
            assert rid not in final.rejected


@settings(max_examples=100)
@given(plans(10), st.data())
def test_replay_determinism(plan, data):
    CASES["determinism"] += 1
    net, sol = plan
    sol = sol.with_(max_amrs=max(sol.m, 1) + 1)
    events = _arrivals(data, net, [9, 10])
    a, ra = _replay(sol, events)
    b, rb = _replay(sol, events)
    assert a.routes == b.routes and a.rejected == b.rejected
    assert [replace(r, response_ms=0) for r in ra] == [replace(r, response_ms=0) for r in rb]


PROPERTIES = [
    test_partition,
    test_idempotence,
    test_cost_additivity,
    test_marginal_exactness,
    test_tabu_matrix_symmetry,
    test_accounting_closure,
    test_replay_determinism,
]
