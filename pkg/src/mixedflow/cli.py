"""Command-line interface.

Every command writes its outputs plus ``manifest.json`` into ``--out``. The
manifest records the arguments and a hash of each deterministic output, so
``mixedflow report --manifest DIR/manifest.json --verify`` can re-run the
command and confirm the outputs come out byte-identical. Wall-clock timings
are written to ``timing.json`` and left out of the hashes.

Exit codes: 0 success, 2 invalid input, 3 solver guard, 1 verification mismatch.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import tempfile
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import __version__
from .dhs_solver import DhsParams, PedProblem, run as dhs_run
from .exact_solver import SolverGuard, solve_exact_network
from .experiments import gap_table, scaling_table, sf_comparison
from .integration import (WeightedProblem, coupling_note, pure_optima, saturation_weight, solve_weighted,
                          sweep_weights, switching_frequency_profile)
from .milp import build_milp, check_trace, export_lp, read_lp
from .mpc import run_mpc
from .ped_dynamics import GeometryError, delay_cost, simulate
from .scenario import ScenarioFile, gen_scenario, load_scenario
from .topology import ALL_RED, HORIZONTAL, STAGE_NAMES, VERTICAL
from .unhappiness import UnhappinessOverflow, unhappiness_breakdown
from .veh_dynamics import simulate_veh, vehicle_delay

EXIT_OK, EXIT_MISMATCH, EXIT_INVALID, EXIT_GUARD = 0, 1, 2, 3
STAGE_CODES = {"H": HORIZONTAL, "V": VERTICAL, "R": ALL_RED}


class InputError(ValueError):
    pass


# -- argument parsing --------------------------------------------------------

def _grid(text: str) -> tuple[int, int]:
    try:
        r, c = text.lower().split("x")
        return int(r), int(c)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like RxC, got {text!r}")


def _pair(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(x) for x in text.split(","))
        return lo, hi
    except ValueError:
        raise argparse.ArgumentTypeError(f"range must look like LO,HI, got {text!r}")


def _shared() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--scenario", type=Path, help="scenario JSON file (otherwise one is generated)")
    p.add_argument("--grid", type=_grid, default=(3, 3), help="rows x columns, e.g. 3x3")
    p.add_argument("--steps", type=int, help="horizon in intervals")
    p.add_argument("--horizon", type=float, help="horizon in seconds; must be a multiple of the interval")
    p.add_argument("--objective", choices=("delay", "unhappiness", "weighted"), default="delay")
    p.add_argument("--weight", type=Fraction, default=Fraction(0), help="pedestrian weight m (weighted objective)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--threads", type=int, default=1, help="worker cap for chunked enumeration")
    p.add_argument("--exp-intervals", action="store_true",
                   help="measure red runs in intervals instead of seconds inside exp()")
    return p


def _schedule_flags(p):
    p.add_argument("--stage", choices=("H", "V"), default="H", help="constant stage when no schedule file")
    p.add_argument("--schedule", type=Path, help="CSV with one row of stage letters per junction")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixedflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mixedflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    shared = _shared()

    g = sub.add_parser("gen-scenario", parents=[shared], help="write a seeded random scenario")
    g.add_argument("--intervals", type=int, help="demand length (default: the horizon)")
    g.add_argument("--coupling", choices=("exclusive", "relaxed"), default="exclusive")
    for name in ("ped-initial", "arrivals", "alpha", "gamma", "veh-initial", "boundary-inflow"):
        g.add_argument(f"--{name}", type=_pair, metavar="LO,HI")

    s = sub.add_parser("simulate", parents=[shared], help="simulate a schedule on both models")
    _schedule_flags(s)

    sub.add_parser("solve-exact", parents=[shared], help="exact optimum")

    d = sub.add_parser("solve-dhs", parents=[shared], help="discrete harmony search")
    d.add_argument("--hms", type=int, default=1000)
    d.add_argument("--ni", type=int, default=1000)
    d.add_argument("--hmcr", type=float, default=0.95)
    d.add_argument("--par", type=float, default=0.5)
    d.add_argument("--bw", type=float, default=1.0)

    e = sub.add_parser("export-milp", parents=[shared], help="write the delay MILP as LP text")
    e.add_argument("--min-rule", action="store_true", help="add rows forcing flows to the min rule")

    c = sub.add_parser("check-milp", parents=[shared], help="check a simulated trace against an LP model")
    c.add_argument("--lp", type=Path, help="LP file (default: build from the scenario)")
    _schedule_flags(c)

    m = sub.add_parser("mpc-run", parents=[shared], help="receding-horizon run")
    m.add_argument("--intervals", type=int, help="number of applied intervals (default: scenario length)")
    m.add_argument("--solver", choices=("exact", "dhs"), default="exact")
    m.add_argument("--noise", type=float, default=0.0, help="std of multiplicative prediction error")

    w = sub.add_parser("sweep-weights", parents=[shared], help="weight sweep with turning weights")
    w.add_argument("--weights", default="0:64:1", help="START:STOP:STEP or comma list")
    w.add_argument("--resolution", type=Fraction, default=Fraction(1, 4))
    w.add_argument("--no-refine", action="store_true")

    r = sub.add_parser("report", parents=[shared], help="experiment tables, or verify a manifest")
    r.add_argument("--tables", default="scaling,gap,sf")
    r.add_argument("--sizes", default="3")
    r.add_argument("--horizons", default="30")
    r.add_argument("--seeds", type=int, default=3, help="instances per cell")
    r.add_argument("--manifest", type=Path, help="manifest to re-run")
    r.add_argument("--verify", action="store_true", help="re-run --manifest and compare output bytes")
    return parser


# -- helpers -----------------------------------------------------------------

def _resolve_steps(args, delta: float, default: int) -> int:
    steps = args.steps
    if args.horizon is not None:
        n = args.horizon / delta
        if n != int(n) or n < 1:
            raise InputError(f"--horizon {args.horizon:g}s is not a positive multiple of the {delta:g}s interval")
        if steps is not None and steps != int(n):
            raise InputError("--steps and --horizon disagree")
        steps = int(n)
    steps = default if steps is None else steps
    if steps < 1:
        raise InputError("--steps must be at least 1")
    return steps


def _scenario(args, steps_default: int = 2) -> tuple[ScenarioFile, int]:
    if args.scenario is not None:
        sf = load_scenario(args.scenario)
        steps = _resolve_steps(args, sf.grid.delta, sf.grid.steps)
        if steps > sf.generator.intervals and steps > len(sf.demand.arrivals[0]):
            raise InputError(f"scenario holds {len(sf.demand.arrivals[0])} intervals, {steps} requested")
        return sf, steps
    steps = _resolve_steps(args, 15.0, steps_default)
    r, c = args.grid
    return gen_scenario(r, c, steps=steps, seed=args.seed), steps


def _in_seconds(args) -> bool:
    return not args.exp_intervals


def _read_schedule(args, n_j: int, steps: int) -> np.ndarray:
    if args.schedule is None:
        return np.full((n_j, steps), STAGE_CODES[args.stage], dtype=np.int64)
    rows = [r for r in csv.reader(args.schedule.read_text().splitlines()) if r]
    try:
        s = np.array([[STAGE_CODES[x.strip().upper()] for x in r] for r in rows], dtype=np.int64)
    except KeyError as exc:
        raise InputError(f"unknown stage letter {exc} in {args.schedule}")
    if s.shape != (n_j, steps):
        raise InputError(f"schedule file must hold {n_j} rows of {steps} stages, got {s.shape}")
    return s


def _table_text(rows, fmt: str) -> str:
    if fmt == "json":
        header, body = rows[0], rows[1:]
        return json.dumps([dict(zip(header, r)) for r in body], indent=1) + "\n"
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


class Outputs:
    def __init__(self, out: Path, fmt: str):
        self.dir = out
        self.fmt = fmt
        self.files: dict[str, str] = {}
        self.timing: dict[str, float] = {}

    def text(self, name: str, content: str):
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / name
        path.write_text(content)
        self.files[name] = hashlib.sha256(content.encode()).hexdigest()

    def table(self, stem: str, rows):
        self.text(f"{stem}.{self.fmt}", _table_text(rows, self.fmt))

    def json(self, name: str, obj):
        self.text(name, json.dumps(obj, indent=1, sort_keys=True, default=_jsonable) + "\n")

    def path(self, name: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        return self.dir / name

    def existing(self, name: str):
        path = self.dir / name
        self.files[name] = hashlib.sha256(path.read_bytes()).hexdigest()


def _jsonable(x):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _schedule_rows(schedule, veh=None):
    header = ["junction", "interval", "stage"] + (["veh_stage"] if veh is not None else [])
    rows = [header]
    for j in range(schedule.shape[0]):
        for k in range(schedule.shape[1]):
            row = [j, k + 1, STAGE_NAMES[int(schedule[j, k])]]
            if veh is not None:
                row.append(STAGE_NAMES[int(veh[j, k])])
            rows.append(row)
    return rows


# -- commands ----------------------------------------------------------------

def cmd_gen(args, out: Outputs):
    steps = _resolve_steps(args, 15.0, 2)
    ranges = {k: v for k, v in (("ped_initial", args.ped_initial), ("arrivals", args.arrivals),
                                ("alpha", args.alpha), ("gamma", args.gamma), ("veh_initial", args.veh_initial),
                                ("boundary_inflow", args.boundary_inflow)) if v is not None}
    r, c = args.grid
    sf = gen_scenario(r, c, steps=steps, seed=args.seed, intervals=args.intervals,
                      coupling_mode=args.coupling, **ranges)
    out.text("scenario.json", sf.to_json())


def cmd_simulate(args, out: Outputs):
    sf, steps = _scenario(args)
    ped, veh = sf.ped_scenario(), sf.veh_scenario()
    schedule = _read_schedule(args, ped.n_junctions, steps)
    trace = simulate(ped, schedule)
    unhappy = unhappiness_breakdown(trace, _in_seconds(args))
    vtrace = simulate_veh(veh.window(0, steps), schedule)
    out.table("ped_trace", trace.csv_rows(unhappy))
    out.table("veh_trace", vtrace.csv_rows())
    out.json("summary.json", {"steps": steps, "ped_delay": delay_cost(trace), "unhappiness": unhappy.total,
                              "veh_delay": vehicle_delay(vtrace),
                              "dropped_vehicles": int(vtrace.dropped.sum())})


def _weighted_problem(sf: ScenarioFile, steps: int, weight) -> WeightedProblem:
    return WeightedProblem(sf.ped_scenario(), sf.veh_scenario(), sf.coupling.build(), weight, steps)


def cmd_solve_exact(args, out: Outputs):
    sf, steps = _scenario(args)
    t0 = time.perf_counter()
    if args.objective == "weighted":
        problem = _weighted_problem(sf, steps, args.weight)
        sol = solve_weighted(problem, "exact")
        out.timing["solve_s"] = time.perf_counter() - t0
        out.table("schedule", _schedule_rows(sol.ped_schedule, sol.veh_schedule))
        out.json("summary.json", {"objective": "weighted", "weight": args.weight, "steps": steps,
                                  "coupling": coupling_note(problem.coupling), "U": float(sol.costs.u),
                                  "U_exact": sol.costs.u, "ped_delay": sol.costs.ped_delay,
                                  "veh_delay": sol.costs.veh_delay, "p_ratio": float(sol.costs.p_ratio),
                                  "v_ratio": float(sol.costs.v_ratio), "p_max": problem.p_max,
                                  "v_max": problem.v_max, "method": "joint enumeration"})
        return
    ped = sf.ped_scenario()
    res = solve_exact_network(ped, args.objective, steps, in_seconds=_in_seconds(args))
    out.timing["solve_s"] = time.perf_counter() - t0
    out.table("schedule", _schedule_rows(res.schedule))
    summary = {"objective": args.objective, "steps": steps, "cost": res.cost, "method": res.method,
               "junction_costs": res.junction_costs}
    if steps >= 2:
        summary["switching_frequency"] = switching_frequency_profile(res.schedule)
    out.json("summary.json", summary)


def cmd_solve_dhs(args, out: Outputs):
    sf, steps = _scenario(args)
    params = DhsParams(args.hms, args.ni, args.hmcr, args.par, args.bw)
    t0 = time.perf_counter()
    if args.objective == "weighted":
        problem = _weighted_problem(sf, steps, args.weight)
        sol = solve_weighted(problem, "dhs", params, args.seed)
        out.timing["solve_s"] = time.perf_counter() - t0
        out.table("schedule", _schedule_rows(sol.ped_schedule, sol.veh_schedule))
        out.json("summary.json", {"objective": "weighted", "weight": args.weight, "steps": steps,
                                  "U": float(sol.costs.u), "ped_delay": sol.costs.ped_delay,
                                  "veh_delay": sol.costs.veh_delay, "params": params.__dict__})
        return
    problem = PedProblem(sf.ped_scenario(), args.objective, steps, _in_seconds(args))
    res = dhs_run(problem, params, args.seed)
    out.timing["solve_s"] = time.perf_counter() - t0
    out.table("schedule", _schedule_rows(res.schedule))
    out.table("convergence", res.trace_rows())
    out.json("summary.json", {"objective": args.objective, "steps": steps, "cost": res.cost,
                              "params": params.__dict__, "seed": args.seed})


def cmd_export(args, out: Outputs):
    sf, steps = _scenario(args)
    model = build_milp(sf.ped_scenario(), steps, min_rule=args.min_rule)
    export_lp(model, out.path("model.lp"))
    out.existing("model.lp")
    out.json("summary.json", {"steps": steps, "counts": model.counts(), "metadata": model.metadata})


def cmd_check(args, out: Outputs):
    sf, steps = _scenario(args)
    ped = sf.ped_scenario()
    model = read_lp(args.lp) if args.lp else build_milp(ped, steps)
    schedule = _read_schedule(args, ped.n_junctions, steps)
    report = check_trace(model, simulate(ped, schedule), history=ped.history)
    out.json("violations.json", report.to_dict())
    print(f"{report.rows_checked} rows checked, {len(report.violations)} violations, "
          f"{len(report.bound_violations)} bound violations")


def cmd_mpc(args, out: Outputs):
    sf, horizon = _scenario(args)
    ped = sf.ped_scenario()
    veh = sf.veh_scenario() if args.objective == "weighted" else None
    t0 = time.perf_counter()
    run = run_mpc(ped, horizon, args.solver, args.objective, steps=args.intervals or ped.intervals,
                  veh_plant=veh, coupling=sf.coupling.build(), weight=args.weight, seed=args.seed,
                  noise=args.noise, in_seconds=_in_seconds(args))
    out.timing["run_s"] = time.perf_counter() - t0
    out.table("applied", run.rows())
    out.json("summary.json", run.summary())


def _weight_grid(text: str) -> list:
    if ":" in text:
        start, stop, step = (Fraction(x) for x in text.split(":"))
        if step <= 0:
            raise InputError("weight step must be positive")
        grid, w = [], start
        while w <= stop:
            grid.append(w)
            w += step
        return grid
    return [Fraction(x) for x in text.split(",")]


def cmd_sweep(args, out: Outputs):
    sf, steps = _scenario(args)
    problem = _weighted_problem(sf, steps, 0)
    t0 = time.perf_counter()
    result = sweep_weights(problem, _weight_grid(args.weights), refine=not args.no_refine,
                           resolution=args.resolution)
    m_sat, _ = saturation_weight(problem)
    optima = pure_optima(problem)
    out.timing["sweep_s"] = time.perf_counter() - t0
    out.table("sweep", result.rows())
    out.json("summary.json", {"steps": steps, "coupling": coupling_note(problem.coupling),
                              "turning_weights": [str(w) for w in result.turning_weights],
                              "saturation_weight": m_sat, "p_max": problem.p_max, "v_max": problem.v_max,
                              "pure_veh_delay": optima["veh_delay"], "pure_ped_delay": optima["ped_delay"]})


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def cmd_report(args, out: Outputs):
    if args.manifest is not None:
        return verify_manifest(args.manifest) if args.verify else print_manifest(args.manifest)
    sizes, horizons = _ints(args.sizes), [float(h) for h in args.horizons.split(",")]
    seeds = range(args.seed, args.seed + args.seeds)
    tables = [t.strip() for t in args.tables.split(",") if t.strip()]
    unknown = set(tables) - {"scaling", "gap", "sf"}
    if unknown:
        raise InputError(f"unknown tables {sorted(unknown)}")
    for name in tables:
        if name == "scaling":
            tb = scaling_table(sizes, horizons, seed=args.seed)
        elif name == "gap":
            tb = gap_table(sizes, horizons, seeds)
        else:
            tb = sf_comparison(sizes, horizons, seeds, in_seconds=_in_seconds(args))
        out.table(name, [tb.columns] + [[_cell(x) for x in r] for r in tb.rows])
        if tb.timing_columns:
            for r in tb.timings:
                out.timing[f"{name}:" + ":".join(str(x) for x in r[:3])] = r[3:]


def _cell(x):
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return int(x) if x.is_integer() else repr(x)
    return x


COMMANDS = {"gen-scenario": cmd_gen, "simulate": cmd_simulate, "solve-exact": cmd_solve_exact,
            "solve-dhs": cmd_solve_dhs, "export-milp": cmd_export, "check-milp": cmd_check,
            "mpc-run": cmd_mpc, "sweep-weights": cmd_sweep, "report": cmd_report}


# -- manifests ---------------------------------------------------------------

def _manifest_argv(argv: list[str]) -> list[str]:
    """Arguments without --out, with file paths made absolute."""
    clean, skip = [], False
    for i, tok in enumerate(argv):
        if skip:
            skip = False
            continue
        if tok == "--out":
            skip = True
            continue
        if tok.startswith("--out="):
            continue
        if i > 0 and argv[i - 1] in ("--scenario", "--schedule", "--lp"):
            tok = str(Path(tok).resolve())
        clean.append(tok)
    return clean


def write_manifest(out: Outputs, argv: list[str], args):
    inputs = {}
    for flag in ("scenario", "schedule", "lp"):
        path = getattr(args, flag, None)
        if path is not None:
            inputs[flag] = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    out.dir.mkdir(parents=True, exist_ok=True)
    manifest = {"tool": "mixedflow", "version": __version__, "command": args.command,
                "argv": _manifest_argv(argv), "seed": args.seed, "inputs": inputs,
                "outputs": dict(sorted(out.files.items())), "volatile": ["timing.json"]}
    (out.dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    if out.timing:
        (out.dir / "timing.json").write_text(json.dumps(out.timing, indent=1, sort_keys=True) + "\n")


def print_manifest(path: Path):
    print(Path(path).read_text(), end="")


def verify_manifest(path: Path) -> int:
    manifest = json.loads(Path(path).read_text())
    with tempfile.TemporaryDirectory() as tmp:
        code = main(manifest["argv"] + ["--out", tmp], quiet=True)
        if code != EXIT_OK:
            print(f"re-run exited with code {code}")
            return EXIT_MISMATCH
        rerun = json.loads((Path(tmp) / "manifest.json").read_text())["outputs"]
    bad = sorted(k for k in set(manifest["outputs"]) | set(rerun) if manifest["outputs"].get(k) != rerun.get(k))
    for name in bad:
        print(f"mismatch: {name}")
    if not bad:
        print(f"verified {len(rerun)} outputs byte-identical")
    return EXIT_MISMATCH if bad else EXIT_OK


def main(argv: list[str] | None = None, quiet: bool = False) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = Outputs(args.out, args.format)
    try:
        code = COMMANDS[args.command](args, out)
    except (SolverGuard, UnhappinessOverflow) as exc:
        print(f"solver guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (InputError, GeometryError, ValidationError, ValueError, OSError, KeyError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if code is not None:
        return code
    write_manifest(out, argv, args)
    if not quiet:
        print(f"wrote {len(out.files)} outputs to {out.dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
