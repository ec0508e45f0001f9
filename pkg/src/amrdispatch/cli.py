"""Command-line entry point.

    amrdispatch solve-static --instance c101.txt --psi 0.2 --iters 500 --seed 1
    amrdispatch simulate --instance rc202.txt --delta 0.10 --seed 7
    amrdispatch sweep --instances data/ --psi 0,0.2,...,0.8 --delta 10,30,50
    amrdispatch replay runs/20250101-120000-000000-simulate/manifest.json

Every command writes into a fresh timestamped directory under ``--out``,
together with a ``manifest.json`` from which ``replay`` re-runs it.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .instance import InstanceError, dynamize, load_solomon, read_record, write_record
from .routing import Network, Params, solution_to_dict
from .simulator import (
    COMPARE_HEADER,
    SWEEP_HEADER,
    Polish,
    SimConfig,
    compare_polish,
    default_workers,
    route_listing,
    run,
    sweep_safety_stock,
    write_csv,
    write_json,
)
from .tabu import TabuState, greedy_initial, tabu_search
from .eiadr import write_timeline

log = logging.getLogger("amrdispatch")

EXIT_USAGE = 2


class CliError(Exception):
    def __init__(self, msg: str, status: int = EXIT_USAGE):
        super().__init__(msg)
        self.status = status


# -- argument helpers ----------------------------------------------------------------


def parse_grid(text: str) -> list[float]:
    """``"0,0.1,...,0.5"`` expands to an arithmetic sequence; plain lists pass through."""
    toks = [t.strip() for t in text.split(",") if t.strip()]
    if "..." not in toks:
        try:
            return [float(t) for t in toks]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None
    i = toks.index("...")
    if i < 2 or i != len(toks) - 2:
        raise argparse.ArgumentTypeError(f"grid {text!r}: '...' needs two values before it and one after")
    try:
        head = [float(t) for t in toks[:i]]
        last = float(toks[-1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None
    step = head[-1] - head[-2]
    if step <= 0 or last < head[-1]:
        raise argparse.ArgumentTypeError(f"grid {text!r} must increase")
    n = int(round((last - head[0]) / step))
    out = [round(head[0] + k * step, 10) for k in range(n + 1)]
    if abs(out[-1] - last) > 1e-9 * max(1.0, abs(last)):
        raise argparse.ArgumentTypeError(f"grid {text!r}: end is not on the step")
    return out


def as_fraction(v: float) -> float:
    """Dynamic degrees above 1 are read as percentages."""
    return v / 100.0 if v > 1 else v


def _delta(text: str) -> float:
    try:
        v = as_fraction(float(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad dynamic degree {text!r}") from None
    if not 0 <= v < 1:
        raise argparse.ArgumentTypeError(f"dynamic degree must lie in [0, 1), got {text}")
    return v


def _delta_grid(text: str) -> list[float]:
    vals = [as_fraction(v) for v in parse_grid(text)]
    for v in vals:
        if not 0 <= v < 1:
            raise argparse.ArgumentTypeError(f"dynamic degree must lie in [0, 1), got {v}")
    return vals


def _add_model_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--psi", type=float, default=0.2, help="safety stock fraction (default 0.2)")
    g.add_argument("--eps", type=float, default=0.05, help="lateness risk level (default 0.05)")
    g.add_argument("--variance", type=float, default=10.0, help="travel and service time variance (default 10)")
    g.add_argument("--rejection-cost", type=float, default=1000.0)
    g.add_argument("--travel-cost", type=float, default=1.0)
    g.add_argument("--delay-cost", type=float, default=100.0)
    g.add_argument("--fixed-cost", type=float, default=3000.0)
    g.add_argument("--iters", type=int, default=500, help="tabu search iterations (default 500)")
    g.add_argument("--tenure", type=int, nargs=2, default=(40, 50), metavar=("L1", "L2"))
    p.add_argument("--out", default="runs", help="base output directory (default ./runs)")


def _params(args) -> Params:
    return Params(
        rejection_cost=args.rejection_cost,
        travel_cost=args.travel_cost,
        delay_cost=args.delay_cost,
        fixed_cost=args.fixed_cost,
        travel_var=args.variance,
        psi=args.psi if not isinstance(args.psi, list) else 0.2,
        eps=args.eps,
    )


def _load(path: str, variance: float):
    p = Path(path)
    if not p.is_file():
        raise CliError(f"no such instance file: {p}")
    try:
        return load_solomon(p, variance)
    except (InstanceError, UnicodeDecodeError) as exc:
        raise CliError(f"{p}: {exc}") from None


def _run_dir(args, command: str) -> Path:
    stamp = dt.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    out = Path(args.out) / f"{stamp}-{command}"
    out.mkdir(parents=True, exist_ok=False)
    return out


def _manifest(out: Path, args, argv: list[str], extra: dict) -> None:
    data = {
        "version": __version__,
        "command": args.command,
        "argv": argv,
        "output_dir": str(out),
        "created": dt.datetime.now().isoformat(timespec="seconds"),
    }
    data.update(extra)
    write_json(data, out / "manifest.json")


# -- commands ------------------------------------------------------------------------


def cmd_solve_static(args, argv) -> int:
    inst = _load(args.instance, args.variance)
    params = _params(args)
    net = Network.from_static(inst, params)
    init = greedy_initial(net, [r.id for r in inst.requests])
    trace = [] if args.trace else None
    state = TabuState.for_network(net, iterations=args.iters, tenure=tuple(args.tenure))
    sol = tabu_search(init, state, np.random.default_rng(args.seed), trace=trace)
    out = _run_dir(args, "solve-static")
    write_json(solution_to_dict(sol), out / "solution.json")
    if trace is not None:
        with open(out / "trace.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "operator", "current", "best"])
            for row in trace:
                w.writerow([row.iteration, row.operator, row.current, row.best])
    _manifest(out, args, argv, {
        "instance": str(Path(args.instance).resolve()),
        "params": asdict(params),
        "seeds": {"tabu": args.seed},
        "iterations": args.iters,
        "tenure": list(args.tenure),
    })
    print(f"total cost {sol.total:.4f}  AMRs {sol.m}  -> {out}")
    return 0


def _sim_config(args, params: Params) -> SimConfig:
    return SimConfig(
        params=params,
        max_amrs=args.max_amrs,
        polish=Polish(args.polish),
        ts_iterations=args.iters,
        polish_iterations=args.polish_iters,
        tenure=tuple(args.tenure),
        tabu_seed=args.seed if args.tabu_seed is None else args.tabu_seed,
        sim_seed=args.seed if args.sim_seed is None else args.sim_seed,
    )


def cmd_simulate(args, argv) -> int:
    inst = _load(args.instance, args.variance)
    params = _params(args)
    try:
        if args.record:
            rec = Path(args.record)
            if not rec.is_file():
                raise CliError(f"no such dynamization record: {rec}")
            dinst = read_record(inst, rec, args.variance)
        else:
            dinst = dynamize(inst, args.delta, args.high_fraction, args.seed, args.variance)
        cfg = _sim_config(args, params)
    except (InstanceError, ValueError, KeyError) as exc:
        raise CliError(str(exc)) from None
    out = _run_dir(args, "simulate")
    write_record(dinst, out / "dynamization.json")
    dyn_ids = [ev.request.id for ev in dinst.events]
    if cfg.polish is Polish.NONE:
        m = run(dinst, cfg)
        metrics = {"eiadr": m.summary()}
        final = m
    else:
        cmp = compare_polish(dinst, replace(cfg, polish=Polish.NONE), args.runs, cfg.polish)
        best_b = min(range(len(cmp.eiadr_ts)), key=lambda i: (cmp.eiadr_ts[i].total, i))
        best_a = min(range(len(cmp.eiadr)), key=lambda i: (cmp.eiadr[i].total, i))
        final = cmp.eiadr_ts[best_b]
        metrics = {
            "eiadr": cmp.eiadr[best_a].summary(),
            "eiadr_ts": final.summary(),
            "comparison": cmp.row(dinst.name, dinst.delta),
        }
        write_csv([cmp.row(dinst.name, dinst.delta)], COMPARE_HEADER, out / "comparison.csv")
    write_json(metrics, out / "metrics.json")
    write_timeline(final.timeline, out / "timeline.jsonl")
    write_json(solution_to_dict(final.final, dyn_ids), out / "solution.json")
    (out / "routes.txt").write_text(route_listing(final.prior, final.final, dyn_ids))
    _manifest(out, args, argv, {
        "instance": str(Path(args.instance).resolve()),
        "dynamization": dinst.to_record() | {"record_path": str(out / "dynamization.json")},
        "config": _cfg_dict(cfg),
    })
    line = f"tau {final.tau:.4f}  total cost {final.total:.4f}  AMRs {final.m_final}/{final.max_amrs}"
    if "comparison" in metrics:
        c = metrics["comparison"]
        line += f"  BRE {c['BRE']:.4f}%  ARE {c['ARE']:.4f}%"
    print(line + f"  -> {out}")
    return 0


def _cfg_dict(cfg: SimConfig) -> dict:
    d = asdict(cfg)
    d["polish"] = cfg.polish.value
    d["tenure"] = list(cfg.tenure)
    return d


def _instance_paths(specs: list[str]) -> list[Path]:
    paths = []
    for spec in specs:
        p = Path(spec)
        if p.is_dir():
            paths.extend(sorted(q for q in p.iterdir() if q.is_file() and q.suffix.lower() in (".txt", ".vrp", "")))
        elif p.is_file():
            paths.append(p)
        else:
            raise CliError(f"no such instance file or directory: {p}")
    return paths


def cmd_sweep(args, argv) -> int:
    paths = _instance_paths(args.instances)
    insts = [_load(str(p), args.variance) for p in paths]
    params = _params(args)
    cfg = _sim_config(args, params)
    out = _run_dir(args, "sweep")
    if not insts:
        log.warning("no instances found in %s; writing an empty table", ", ".join(args.instances))
    workers = args.workers or default_workers()
    rows = sweep_safety_stock(insts, args.psi, args.delta, cfg, args.high_fraction, args.seed, workers)
    write_csv(rows, SWEEP_HEADER, out / "sweep.csv")
    outputs = ["sweep.csv"]
    if args.runs:
        comp = []
        for inst in insts:
            for d in args.delta:
                dinst = dynamize(inst, d, args.high_fraction, args.seed, args.variance)
                for psi in args.psi:
                    c = replace(cfg, params=replace(params, psi=psi), polish=Polish.NONE)
                    cmp = compare_polish(dinst, c, args.runs, Polish(args.compare_polish))
                    comp.append(cmp.row(inst.name, d) | {"psi": psi})
        write_csv(comp, ["instance", "delta", "psi"] + COMPARE_HEADER[2:], out / "comparison.csv")
        outputs.append("comparison.csv")
    _manifest(out, args, argv, {
        "instances": [str(p.resolve()) for p in paths],
        "psi_grid": args.psi,
        "delta_grid": args.delta,
        "config": _cfg_dict(cfg),
        "dynamize_seed": args.seed,
        "high_fraction": args.high_fraction,
    })
    print(f"{len(rows)} sweep rows -> {out / 'sweep.csv'}")
    return 0


def cmd_replay(args, argv) -> int:
    path = Path(args.manifest)
    if not path.is_file():
        raise CliError(f"no such manifest: {path}")
    data = json.loads(path.read_text())
    old = list(data["argv"])
    if args.out:
        old += ["--out", args.out]
    return main(old)


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="amrdispatch", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-static", help="plan all requests of an instance at t = 0")
    p.add_argument("--instance", required=True)
    p.add_argument("--seed", type=int, default=0, help="tabu search seed")
    p.add_argument("--trace", action="store_true", help="write the per-iteration trace CSV")
    _add_model_args(p)
    p.set_defaults(func=cmd_solve_static)

    def sim_args(p):
        p.add_argument("--high-fraction", type=float, default=0.5, help="share of dynamic requests that are HIGH")
        p.add_argument("--seed", type=int, default=0, help="dynamization seed; also the default for the others")
        p.add_argument("--tabu-seed", type=int, default=None)
        p.add_argument("--sim-seed", type=int, default=None)
        p.add_argument("--max-amrs", type=int, default=None, help="fixed fleet cap instead of ceil(m/(1-delta))")
        p.add_argument("--polish-iters", type=int, default=None, help="polish iterations (default --iters)")

    p = sub.add_parser("simulate", help="two-stage run with dynamic arrivals")
    p.add_argument("--instance", required=True)
    p.add_argument("--delta", type=_delta, default=0.1, help="dynamic degree, fraction or percent")
    p.add_argument("--record", help="reuse a dynamization record instead of drawing one")
    p.add_argument("--polish", choices=[x.value for x in Polish], default="none")
    p.add_argument("--runs", type=int, default=10, help="seeded runs per arm when polishing (default 10)")
    sim_args(p)
    _add_model_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="service rate over safety stock and dynamic degree")
    p.add_argument("--instances", nargs="+", required=True, help="instance files and/or directories")
    p.add_argument("--delta", type=_delta_grid, default=[0.1, 0.3, 0.5, 0.7, 0.9])
    p.add_argument("--runs", type=int, default=0, help="also write the EIADR vs EIADR+TS table over this many runs")
    p.add_argument("--compare-polish", choices=["ts-after-all", "ts-per-request"], default="ts-after-all")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default $AMRDISPATCH_WORKERS or 1)")
    sim_args(p)
    _add_model_args(p)
    p.set_defaults(func=cmd_sweep, polish="none")
    for a in p._actions:
        if a.dest == "psi":
            a.type = parse_grid
            a.default = [0.0, 0.2, 0.4, 0.6, 0.8]
            a.help = "safety stock grid, e.g. 0,0.1,...,0.9"

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_replay)
    return ap


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s: %(message)s",
    )
    try:
        return args.func(args, argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.status
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
