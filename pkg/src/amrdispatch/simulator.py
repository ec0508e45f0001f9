"""Two-stage dispatch simulation, safety-stock sweeps and polish comparison.

A run plans the static requests at t = 0 (greedy + tabu search with the
safety stock), fixes the fleet cap, then replays the dynamic arrivals in
epoch order through :func:`amrdispatch.eiadr.insert_dynamic`.  The clock only
advances at arrivals; AMR motion in between is what the Gaussian plan says.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .eiadr import DecisionRecord, insert_dynamic
from .instance import DynamicInstance, StaticInstance, dynamize
from .routing import CostBreakdown, Mode, Network, Params, Solution
from .tabu import TabuState, greedy_initial, tabu_search

log = logging.getLogger(__name__)

WORKERS_ENV = "AMRDISPATCH_WORKERS"


class Polish(str, enum.Enum):
    NONE = "none"
    TS_AFTER_ALL = "ts-after-all"
    TS_PER_REQUEST = "ts-per-request"


@dataclass(frozen=True)
class SimConfig:
    """Run settings.  ``max_amrs=None`` derives the cap as ``ceil(m / (1 - delta))``."""

    params: Params = field(default_factory=Params)
    max_amrs: int | None = None
    polish: Polish = Polish.NONE
    ts_iterations: int = 500
    polish_iterations: int | None = None
    tenure: tuple[int, int] = (40, 50)
    tabu_seed: int = 0
    sim_seed: int = 0

    def __post_init__(self):
        if self.max_amrs is not None and self.max_amrs < 1:
            raise ValueError(f"fleet cap must be at least 1, got {self.max_amrs}")
        if self.ts_iterations < 0:
            raise ValueError("ts_iterations must be non-negative")
        lo, hi = self.tenure
        if not 0 < lo <= hi:
            raise ValueError(f"bad tenure range {self.tenure}")

    def fleet_cap(self, m: int, delta: float) -> int:
        if self.max_amrs is not None:
            return self.max_amrs
        return max(math.ceil(m / (1.0 - delta) - 1e-9), m)


@dataclass
class SimMetrics:
    cost: CostBreakdown
    stage1_cost: CostBreakdown
    tau: float
    tau_vacuous: bool
    n_dynamic: int
    n_served_dynamic: int
    n_rejected: int
    m_stage1: int
    m_final: int
    max_amrs: int
    response_ms_mean: float
    response_ms_max: float
    cpu_stage1: float
    cpu_stage2: float
    polish_gain: float
    timeline: list[DecisionRecord]
    prior: Solution = field(repr=False)
    final: Solution = field(repr=False)

    @property
    def total(self) -> float:
        return self.cost.total

    @property
    def cpu(self) -> float:
        return self.cpu_stage1 + self.cpu_stage2

    def summary(self) -> dict:
        return {
            "cost": self.cost.as_dict(),
            "stage1_cost": self.stage1_cost.as_dict(),
            "tau": self.tau,
            "tau_vacuous": self.tau_vacuous,
            "n_dynamic": self.n_dynamic,
            "n_served_dynamic": self.n_served_dynamic,
            "n_rejected": self.n_rejected,
            "m_stage1": self.m_stage1,
            "m_final": self.m_final,
            "max_amrs": self.max_amrs,
            "response_ms_mean": self.response_ms_mean,
            "response_ms_max": self.response_ms_max,
            "cpu_stage1_s": self.cpu_stage1,
            "cpu_stage2_s": self.cpu_stage2,
            "polish_gain": self.polish_gain,
        }


def plan_stage1(net: Network, ids, cfg: SimConfig) -> Solution:
    init = greedy_initial(net, ids, Mode.STATIC)
    state = TabuState.for_network(net, iterations=cfg.ts_iterations, tenure=cfg.tenure)
    return tabu_search(init, state, np.random.default_rng(cfg.tabu_seed), Mode.STATIC, True)


def polish(sol: Solution, cfg: SimConfig, rng: np.random.Generator) -> Solution:
    """Tabu search over the current plan; frozen stops and rejections stay put."""
    n = cfg.ts_iterations if cfg.polish_iterations is None else cfg.polish_iterations
    state = TabuState.for_network(sol.net, iterations=n, tenure=cfg.tenure)
    return tabu_search(sol, state, rng, Mode.DYNAMIC, strict=False)


def replay(prior: Solution, dinst: DynamicInstance, cfg: SimConfig, max_amrs: int):
    """Stage 2 from a given prior plan.  Returns ``(final, records, polish_gain)``."""
    rng = np.random.default_rng(cfg.sim_seed)
    sol = prior.with_(max_amrs=max_amrs)
    records = []
    gain = 0.0
    for ev in dinst.events:
        sol, rec = insert_dynamic(ev.request.id, sol, ev.arrival, ev.priority)
        records.append(rec)
        if cfg.polish is Polish.TS_PER_REQUEST:
            before = sol.total
            sol = polish(sol, cfg, rng)
            gain += before - sol.total
    if cfg.polish is Polish.TS_AFTER_ALL and dinst.events:
        before = sol.total
        sol = polish(sol, cfg, rng)
        gain += before - sol.total
    return sol, records, gain


def run(dinst: DynamicInstance, cfg: SimConfig | None = None) -> SimMetrics:
    cfg = cfg or SimConfig()
    params = replace(cfg.params, travel_var=dinst.travel_var)
    net = Network.from_dynamic(dinst, params)
    t0 = time.perf_counter()
    prior = plan_stage1(net, [r.id for r in dinst.static_part.requests], cfg)
    t1 = time.perf_counter()
    cap = cfg.fleet_cap(prior.m, dinst.delta)
    if prior.m > cap:
        raise ValueError(f"stage-1 plan needs {prior.m} AMRs but the cap is {cap}")
    final, records, gain = replay(prior, dinst, cfg, cap)
    t2 = time.perf_counter()
    return _metrics(dinst, prior, final, records, gain, cap, t1 - t0, t2 - t1)


def _metrics(dinst, prior, final, records, gain, cap, cpu1, cpu2) -> SimMetrics:
    n_d = dinst.n_dynamic
    dyn_ids = {ev.request.id for ev in dinst.events}
    rejected = len(final.rejected & dyn_ids)
    served = n_d - rejected
    ms = [r.response_ms for r in records]
    return SimMetrics(
        cost=final.cost,
        stage1_cost=prior.cost,
        tau=served / n_d if n_d else 1.0,
        tau_vacuous=n_d == 0,
        n_dynamic=n_d,
        n_served_dynamic=served,
        n_rejected=len(final.rejected),
        m_stage1=prior.m,
        m_final=final.m,
        max_amrs=cap,
        response_ms_mean=statistics.fmean(ms) if ms else 0.0,
        response_ms_max=max(ms, default=0.0),
        cpu_stage1=cpu1,
        cpu_stage2=cpu2,
        polish_gain=gain,
        timeline=records,
        prior=prior,
        final=final,
    )


# -- sweeps --------------------------------------------------------------------------

SWEEP_HEADER = [
    "instance", "delta", "psi", "tau", "travel", "delay", "fixed", "rejection", "total", "mean_response_ms",
]


@dataclass(frozen=True)
class SweepCell:
    inst: StaticInstance
    delta: float
    psi: float
    high_fraction: float
    dyn_seed: int
    cfg: SimConfig


def run_cell(cell: SweepCell) -> dict:
    dinst = dynamize(cell.inst, cell.delta, cell.high_fraction, cell.dyn_seed, cell.cfg.params.travel_var)
    cfg = replace(cell.cfg, params=replace(cell.cfg.params, psi=cell.psi))
    m = run(dinst, cfg)
    c = m.cost
    return {
        "instance": cell.inst.name,
        "delta": cell.delta,
        "psi": cell.psi,
        "tau": m.tau,
        "travel": c.travel,
        "delay": c.delay,
        "fixed": c.fixed,
        "rejection": c.rejection,
        "total": c.total,
        "mean_response_ms": m.response_ms_mean,
    }


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def _map(fn, items: list, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def sweep_safety_stock(
    instances: Sequence[StaticInstance],
    psi_grid: Sequence[float],
    delta_grid: Sequence[float],
    cfg: SimConfig | None = None,
    high_fraction: float = 0.5,
    dyn_seed: int = 0,
    workers: int | None = None,
) -> list[dict]:
    """One row per (instance, delta, psi); every cell uses the same seeds."""
    cfg = cfg or SimConfig()
    cells = [
        SweepCell(inst, d, p, high_fraction, dyn_seed, cfg)
        for inst in instances
        for d in delta_grid
        for p in psi_grid
    ]
    return _map(run_cell, cells, workers or default_workers())


def write_csv(rows: Sequence[dict], header: Sequence[str], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(header))
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in header})


# -- EIADR vs EIADR+TS ---------------------------------------------------------------

COMPARE_HEADER = [
    "instance", "delta",
    "Obj_A_EIADR", "CPU_A_EIADR", "Obj_B_EIADR", "CPU_B_EIADR", "CPU_Bmin_EIADR",
    "Obj_A_TS", "CPU_A_TS", "Obj_B_TS", "CPU_B_TS", "CPU_Bmin_TS",
    "BRE", "ARE",
]


@dataclass(frozen=True)
class ArmStats:
    """Per-method columns: A is the average over runs, B the best run.

    CPU is stage-2 time (insertions, plus polish for the TS arm); the shared
    stage-1 plan is left out.  ``cpu_b`` is the time of the best-objective
    run and ``cpu_b_min`` the fastest run.
    """

    obj_a: float
    cpu_a: float
    obj_b: float
    cpu_b: float
    cpu_b_min: float

    @classmethod
    def of(cls, runs: Sequence[SimMetrics]) -> "ArmStats":
        best = min(range(len(runs)), key=lambda i: (runs[i].total, i))
        return cls(
            statistics.fmean(m.total for m in runs),
            statistics.fmean(m.cpu_stage2 for m in runs),
            runs[best].total,
            runs[best].cpu_stage2,
            min(m.cpu_stage2 for m in runs),
        )


@dataclass
class PolishComparison:
    eiadr: list[SimMetrics]
    eiadr_ts: list[SimMetrics]
    cpu_ts: list[float]

    @property
    def a(self) -> ArmStats:
        return ArmStats.of(self.eiadr)

    @property
    def b(self) -> ArmStats:
        return ArmStats.of(self.eiadr_ts)

    @property
    def bre(self) -> float:
        """Relative gap of the best objectives, in percent."""
        a, b = self.a.obj_b, self.b.obj_b
        return (a - b) / b * 100.0 if b else 0.0

    @property
    def are(self) -> float:
        """Relative gap of the average objectives, in percent."""
        a, b = self.a.obj_a, self.b.obj_a
        return (a - b) / b * 100.0 if b else 0.0

    def per_run_gaps(self) -> list[float]:
        return [a.total - b.total for a, b in zip(self.eiadr, self.eiadr_ts)]

    def row(self, instance: str, delta: float) -> dict:
        a, b = self.a, self.b
        return {
            "instance": instance,
            "delta": delta,
            "Obj_A_EIADR": a.obj_a,
            "CPU_A_EIADR": a.cpu_a,
            "Obj_B_EIADR": a.obj_b,
            "CPU_B_EIADR": a.cpu_b,
            "CPU_Bmin_EIADR": a.cpu_b_min,
            "Obj_A_TS": b.obj_a,
            "CPU_A_TS": b.cpu_a,
            "Obj_B_TS": b.obj_b,
            "CPU_B_TS": b.cpu_b,
            "CPU_Bmin_TS": b.cpu_b_min,
            "BRE": self.bre,
            "ARE": self.are,
        }


def compare_polish(
    dinst: DynamicInstance,
    cfg: SimConfig | None = None,
    runs: int = 10,
    polish_mode: Polish = Polish.TS_AFTER_ALL,
) -> PolishComparison:
    """EIADR alone (arm A) vs EIADR followed by tabu polish (arm B).

    Run ``r`` uses tabu/simulation seeds ``base + r``.  Both arms share the
    stage-1 plan and the dynamic replay of that run; arm B then polishes, so
    each arm-B objective is at most its arm-A counterpart.
    """
    cfg = cfg or SimConfig()
    arm_a, arm_b, cpu_ts = [], [], []
    for r in range(runs):
        c = replace(cfg, tabu_seed=cfg.tabu_seed + r, sim_seed=cfg.sim_seed + r, polish=Polish.NONE)
        a = run(dinst, c)
        arm_a.append(a)
        if polish_mode is Polish.NONE:
            arm_b.append(a)
            cpu_ts.append(0.0)
            continue
        t0 = time.perf_counter()
        if polish_mode is Polish.TS_AFTER_ALL:
            rng = np.random.default_rng(c.sim_seed)
            final = polish(a.final, c, rng) if dinst.events else a.final
            gain = a.final.total - final.total
            records = a.timeline
        else:
            cb = replace(c, polish=Polish.TS_PER_REQUEST)
            final, records, gain = replay(a.prior, dinst, cb, a.max_amrs)
            if final.total > a.final.total:
                final, records, gain = a.final, a.timeline, 0.0
        dt = time.perf_counter() - t0
        b = _metrics(dinst, a.prior, final, records, gain, a.max_amrs, a.cpu_stage1, a.cpu_stage2 + dt)
        arm_b.append(b)
        cpu_ts.append(dt)
    return PolishComparison(arm_a, arm_b, cpu_ts)


def route_listing(prior: Solution, final: Solution, dynamic_ids) -> str:
    """Prior vs final routes, dynamic requests marked with ``*``."""
    dyn = set(dynamic_ids)

    def fmt(r):
        return "-".join(f"{s}*" if s in dyn else str(s) for s in r.stops)

    lines = ["AMR\tprior route\tfinal route"]
    prior_by = {r.amr: r for r in prior.routes}
    final_by = {r.amr: r for r in final.routes}
    for amr in sorted(set(prior_by) | set(final_by)):
        a = fmt(prior_by[amr]) if amr in prior_by else "-"
        b = fmt(final_by[amr]) if amr in final_by else "-"
        lines.append(f"{amr}\t{a}\t{b}")
    if final.rejected:
        lines.append("rejected\t" + ",".join(str(i) for i in sorted(final.rejected)))
    return "\n".join(lines) + "\n"


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, default=float) + "\n")
