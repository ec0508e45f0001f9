"""Seeded Solomon-like instance families for tests and sweeps.

Six kinds mirror the classic benchmark classes: C (clustered), R (uniform) and
RC (half of each) coordinates, with type 1 (short horizon, narrow windows,
small capacity) or type 2 (long horizon, wide windows, large capacity).
"""

from __future__ import annotations

import math

import numpy as np

from .instance import RequestSpec, StaticInstance

KINDS = ("C1", "C2", "R1", "R2", "RC1", "RC2")

# horizon, capacity, service time, window half-width range
_TRAITS = {
    "C1": (1236.0, 200.0, 90.0, (20.0, 45.0)),
    "C2": (3390.0, 700.0, 90.0, (80.0, 320.0)),
    "R1": (230.0, 200.0, 10.0, (5.0, 15.0)),
    "R2": (1000.0, 1000.0, 10.0, (60.0, 300.0)),
    "RC1": (240.0, 200.0, 10.0, (10.0, 30.0)),
    "RC2": (960.0, 1000.0, 10.0, (60.0, 300.0)),
}


def _coords(kind: str, n: int, rng: np.random.Generator) -> np.ndarray:
    def clustered(k):
        centers = rng.uniform(15, 85, size=(max(1, math.ceil(k / 10)), 2))
        pick = rng.integers(0, len(centers), size=k)
        return np.clip(centers[pick] + rng.normal(0, 4.0, size=(k, 2)), 0, 100)

    if kind.startswith("RC"):
        half = n // 2
        return np.vstack([clustered(half), rng.uniform(0, 100, size=(n - half, 2))])
    if kind.startswith("C"):
        return clustered(n)
    return rng.uniform(0, 100, size=(n, 2))


def synthetic_instance(
    kind: str = "C1",
    n: int = 100,
    seed: int = 0,
    capacity: float | None = None,
    service_var: float = 10.0,
) -> StaticInstance:
    """A random instance of the given class with every window reachable from the depot."""
    kind = kind.upper()
    if kind not in _TRAITS:
        raise ValueError(f"unknown kind {kind!r}; expected one of {KINDS}")
    horizon, cap, service, (wlo, whi) = _TRAITS[kind]
    if capacity is not None:
        cap = capacity
    rng = np.random.default_rng(seed)
    depot = (50.0, 50.0)
    xy = np.round(_coords(kind, n, rng), 0)
    reqs = []
    for i in range(n):
        x, y = float(xy[i, 0]), float(xy[i, 1])
        t0 = math.hypot(x - depot[0], y - depot[1])
        latest = horizon - service - t0
        center = rng.uniform(t0, max(t0, latest))
        half = rng.uniform(wlo, whi)
        early = float(max(0.0, math.floor(center - half)))
        due = float(min(math.floor(latest), math.ceil(center + half)))
        if due < early:
            due = early
        if kind.startswith("C"):
            demand = float(rng.choice([10, 20, 30, 40]))
        else:
            demand = float(rng.integers(1, 42))
        demand = min(demand, cap)
        reqs.append(RequestSpec(i + 1, x, y, demand, early, due, service, service_var))
    return StaticInstance(depot, tuple(reqs), cap, (0.0, horizon), f"{kind.lower()}-{n}-s{seed}", 25)


def family(kind: str, n: int, seeds) -> list[StaticInstance]:
    return [synthetic_instance(kind, n, s) for s in seeds]
