from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from amrdispatch.instance import RequestSpec
from amrdispatch.routing import Network, Params, Solution, make_route

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")

C101_HEAD = """C101

VEHICLE
NUMBER     CAPACITY
  25         200

CUSTOMER
CUST NO.  XCOORD.   YCOORD.    DEMAND   READY TIME  DUE DATE   SERVICE TIME

    0      40         50          0          0       1236          0
"""


def random_network(seed: int, n: int = 8, det: bool = True, capacity: float = 1e6, psi: float = 0.0, **kw) -> Network:
    """Small random network; ``det`` zeroes every variance."""
    rng = np.random.default_rng(seed)
    reqs = []
    for i in range(1, n + 1):
        x, y = rng.uniform(0, 50, 2)
        e = float(rng.uniform(0, 150))
        reqs.append(
            RequestSpec(i, float(x), float(y), float(rng.integers(5, 30)), e, e + float(rng.uniform(40, 120)),
                        5.0, 0.0 if det else 10.0)
        )
    params = Params(travel_var=0.0 if det else 10.0, psi=psi, **kw)
    return Network((25.0, 25.0), reqs, capacity, (0.0, 600.0), params)


def figure1(rejection_cost: float = 1.0, delay_cost: float = 1.0):
    """Two AMRs at the fleet cap, times in minutes from midnight, unit speed, no variance.

    AMR 1 serves 1 -> 2 -> 3 east of the depot; AMR 2 works far to the south.
    Request 8 (HIGH, window 9:05-9:15) appears at 8:45, request 9 (LOW,
    window 9:10-9:20) at 8:52.
    """
    reqs = [
        RequestSpec(1, 10, 0, 10, 500, 520, 5, 0),
        RequestSpec(2, 20, 0, 10, 530, 540, 5, 0),
        RequestSpec(3, 39, 32, 10, 570, 590, 5, 0),
        RequestSpec(4, 0, -60, 10, 500, 560, 5, 0),
        RequestSpec(5, 0, -80, 10, 540, 620, 5, 0),
        RequestSpec(8, 30, 0, 10, 545, 555, 5, 0),
        RequestSpec(9, 30, 20, 10, 550, 560, 5, 0),
    ]
    params = Params(rejection_cost=rejection_cost, delay_cost=delay_cost, travel_var=0.0, psi=0.0)
    net = Network((0.0, 0.0), reqs, 100, (0.0, 1440.0), params)
    routes = (make_route([0, 1, 2, 3, 0], net, amr=1), make_route([0, 4, 5, 0], net, amr=2))
    return net, Solution(net, routes, frozenset(), 0.0, 2)


@pytest.fixture
def fig1():
    return figure1()


# criterion number -> (passed, detail), filled by the acceptance suite
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
