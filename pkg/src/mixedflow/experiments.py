"""Desk-scale experiment tables: scaling, heuristic gap and switching frequency.

Each table keeps wall-clock columns apart from the deterministic ones so the
main CSV is reproducible byte for byte; timings go to a companion file.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dhs_solver import DhsParams, PedProblem, run as dhs_run
from .exact_solver import solve_exact_network
from .integration import switching_frequency_profile
from .milp import build_milp
from .scenario import gen_scenario

REFERENCE_COUNTS = {(3, 5): (1710, 3843)}


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)
    timing_columns: list = field(default_factory=list)
    timings: list = field(default_factory=list)

    def add(self, row: dict, timing: dict | None = None):
        self.rows.append([row[c] for c in self.columns])
        if self.timing_columns:
            self.timings.append([row[c] for c in self.columns[:self._key_width]] +
                                [timing[c] for c in self.timing_columns])

    _key_width = 3

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            w.writerows([_cell(x) for x in r] for r in self.rows)
        return path

    def write_timings(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns[:self._key_width] + self.timing_columns)
            w.writerows([_cell(x) for x in r] for r in self.timings)
        return path


def _cell(x):
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return int(x) if x.is_integer() else repr(x)
    return x


def _steps(horizon: float, delta: float) -> int:
    steps = horizon / delta
    if steps != int(steps) or steps < 1:
        raise ValueError(f"horizon {horizon}s is not a positive multiple of the {delta}s interval")
    return int(steps)


def scaling_table(sizes=(3, 4, 5), horizons=(30, 60, 90), seed: int = 0, delta: float = 15.0) -> Table:
    """Exact decomposed solve plus MILP size for each grid size and horizon."""
    table = Table(["n", "horizon_s", "steps", "objective", "method", "variables", "constraints",
                   "binary", "integer", "ref_variables", "ref_constraints"], timing_columns=["solve_s", "build_s"])
    for n in sizes:
        for h in horizons:
            steps = _steps(h, delta)
            sc = gen_scenario(n, n, steps=steps, seed=seed, delta=delta).ped_scenario()
            t0 = time.perf_counter()
            model = build_milp(sc, steps)
            t1 = time.perf_counter()
            res = solve_exact_network(sc, "delay", steps)
            t2 = time.perf_counter()
            counts = model.counts()
            ref = REFERENCE_COUNTS.get((n, steps), ("", ""))
            table.add({"n": n, "horizon_s": h, "steps": steps, "objective": res.cost, "method": res.method,
                       "variables": counts["variables"], "constraints": counts["constraints"],
                       "binary": counts["binary"], "integer": counts["integer"],
                       "ref_variables": ref[0], "ref_constraints": ref[1]},
                      {"solve_s": t2 - t1, "build_s": t1 - t0})
    return table


def gap_table(sizes=(3,), horizons=(30, 60, 90), seeds=range(10), params: DhsParams = DhsParams(),
              delta: float = 15.0) -> Table:
    """Harmony search against the exact optimum; gap = (J - J*) / J*."""
    table = Table(["n", "horizon_s", "seed", "exact", "dhs", "gap"], timing_columns=["dhs_s"])
    for n in sizes:
        for h in horizons:
            steps = _steps(h, delta)
            for seed in seeds:
                sc = gen_scenario(n, n, steps=steps, seed=seed, delta=delta).ped_scenario()
                exact = solve_exact_network(sc, "delay", steps).cost
                t0 = time.perf_counter()
                found = dhs_run(PedProblem(sc, "delay", steps), params, seed).cost
                dt = time.perf_counter() - t0
                gap = (found - exact) / exact if exact > 0 else 0.0
                table.add({"n": n, "horizon_s": h, "seed": seed, "exact": exact, "dhs": found, "gap": gap},
                          {"dhs_s": dt})
    return table


def sf_comparison(sizes=(3,), horizons=(30,), seeds=range(10), delta: float = 15.0,
                  in_seconds: bool = True, **ranges) -> Table:
    """Profile switching frequency of the exact optimum under each pedestrian objective."""
    table = Table(["n", "horizon_s", "seed", "sf_delay", "sf_unhappiness", "total_demand"])
    for n in sizes:
        for h in horizons:
            steps = _steps(h, delta)
            for seed in seeds:
                sc = gen_scenario(n, n, steps=steps, seed=seed, delta=delta, **ranges).ped_scenario()
                d = solve_exact_network(sc, "delay", steps)
                u = solve_exact_network(sc, "unhappiness", steps, in_seconds=in_seconds)
                demand = int(sc.initial_volume.sum() + sc.arrivals[:, :steps].sum())
                table.add({"n": n, "horizon_s": h, "seed": seed,
                           "sf_delay": switching_frequency_profile(d.schedule),
                           "sf_unhappiness": switching_frequency_profile(u.schedule),
                           "total_demand": demand})
    return table
