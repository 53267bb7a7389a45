"""Discrete harmony search over stage schedules.

A harmony is a flat vector with one element per junction-interval, stored
junction-major (``x[j * N + k]``). Under the two-stage encoding an element
is the stage bit itself, so every vector is a valid schedule. Problems with
more options per element (e.g. an all-red joint mode) use option indices.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exact_solver import OBJECTIVES, ped_cost_table, ped_costs
from .ped_dynamics import PedScenario
from .topology import STAGES
from .unhappiness import DEFAULT_EXP_CAP, exp_table

TABLE_MAX_STEPS = 16


@dataclass(frozen=True)
class DhsParams:
    hms: int = 1000
    ni: int = 1000
    hmcr: float = 0.95
    par: float = 0.5
    bw: float = 1.0  # probability that a pitch adjustment actually changes the element

    def __post_init__(self):
        if self.hms < 1:
            raise ValueError("HMS must be >= 1")
        if self.ni < 1:
            raise ValueError("NI must be >= 1")
        for name in ("hmcr", "par"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name.upper()} must lie in [0, 1], got {v}")
        if not 0 < self.bw <= 1:
            raise ValueError(f"BW must lie in (0, 1], got {self.bw}")


class PedProblem:
    """Pedestrian objective over a network, evaluated from per-junction cost tables."""

    def __init__(self, scenario: PedScenario, objective: str = "delay", steps: int | None = None,
                 in_seconds: bool = True, cap: float = DEFAULT_EXP_CAP, options=STAGES):
        if objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        self.scenario = scenario
        self.objective = objective
        self.steps = scenario.intervals if steps is None else steps
        self.options = np.asarray(options, dtype=np.int64)
        self.n_options = len(self.options)
        self.n_junctions = scenario.n_junctions
        self.n_elements = self.n_junctions * self.steps
        self._powers = self.n_options ** np.arange(self.steps - 1, -1, -1, dtype=np.int64)
        self._table = None
        self._exp = None
        if self.steps <= TABLE_MAX_STEPS:
            _, self._table = ped_cost_table(scenario, objective, self.steps, self.options, in_seconds, cap)
        elif objective == "unhappiness":
            self._exp = exp_table(self.steps, scenario.delta, in_seconds, cap)

    def decode(self, x) -> np.ndarray:
        return self.options[np.asarray(x, dtype=np.int64).reshape(self.n_junctions, self.steps)]

    def evaluate(self, x) -> np.ndarray:
        """Costs of harmonies ``x`` with shape (B, n_elements)."""
        x = np.asarray(x, dtype=np.int64).reshape(-1, self.n_junctions, self.steps)
        if self._table is not None:
            codes = x @ self._powers
            per = self._table[np.arange(self.n_junctions), codes]  # (B, J)
        else:
            stages = np.moveaxis(self.options[x], 0, 1)
            per = ped_costs(self.scenario, stages, self.objective, self._exp).T
        return per.sum(axis=1)


@dataclass
class HarmonyMemory:
    vectors: np.ndarray  # (HMS, n) option indices
    costs: np.ndarray  # (HMS,)
    params: DhsParams
    n_options: int = 2

    @property
    def best(self) -> int:
        return int(np.argmin(self.costs))

    @property
    def worst(self) -> int:
        return int(np.argmax(self.costs))


def initialize(problem, params: DhsParams, rng: np.random.Generator) -> HarmonyMemory:
    lb, ub = 0, problem.n_options - 1
    raw = lb + rng.random((params.hms, problem.n_elements)) * (ub - lb)
    vectors = np.rint(raw).astype(np.int64)
    return HarmonyMemory(vectors, problem.evaluate(vectors), params, problem.n_options)


def improvise(memory: HarmonyMemory, rng: np.random.Generator) -> np.ndarray:
    p = memory.params
    hms, n = memory.vectors.shape
    m = memory.n_options
    from_memory = rng.random(n) < p.hmcr
    picks = rng.integers(0, hms, n)
    x = memory.vectors[picks, np.arange(n)]
    adjust = from_memory & (rng.random(n) < p.par) & (rng.random(n) < p.bw)
    # move to a different option; with two options this flips the bit
    shift = rng.integers(1, m, n) if m > 2 else np.ones(n, dtype=np.int64)
    x = np.where(adjust, (x + shift) % m, x)
    return np.where(from_memory, x, rng.integers(0, m, n))


@dataclass
class DhsResult:
    schedule: np.ndarray
    cost: float
    trace: list  # best cost after each improvisation
    replaced: list = field(default_factory=list)
    memory: HarmonyMemory | None = None

    def trace_rows(self):
        rows = [["iteration", "best_cost", "replaced"]]
        for i, (c, r) in enumerate(zip(self.trace, self.replaced), start=1):
            rows.append([i, repr(float(c)), int(r)])
        return rows

    def write_trace(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            csv.writer(fh).writerows(self.trace_rows())
        return path


def run(problem, params: DhsParams = DhsParams(), seed: int = 0) -> DhsResult:
    rng = np.random.default_rng(seed)
    memory = initialize(problem, params, rng)
    trace, replaced = [], []
    best = memory.costs.min()
    for _ in range(params.ni):
        x = improvise(memory, rng)
        c = problem.evaluate(x[None])[0]
        w = memory.worst
        hit = c < memory.costs[w]
        if hit:
            memory.vectors[w] = x
            memory.costs[w] = c
            best = min(best, c)
        trace.append(float(best))
        replaced.append(bool(hit))
    b = memory.best
    return DhsResult(problem.decode(memory.vectors[b]), float(memory.costs[b]), trace, replaced, memory)
