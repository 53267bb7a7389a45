"""Weighted pedestrian + vehicle scheduling.

Both delays are scaled by their maxima over the coupled schedule space and
combined as ``U = V / V_max + m * P / P_max``. For exact work every joint
schedule is costed once in integer delay units; minimising ``U`` at a
rational weight ``m = a / b`` is then the integer problem

    argmin  b * V * P_max + a * P * V_max

so argmins, ties and turning weights are computed without rounding.
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .dhs_solver import DhsParams, run as dhs_run
from .exact_solver import (ENUM_NODE_CAP, SolverGuard, VehStepModel, joint_size, joint_space,
                           ped_cost_table, solve_exact_network, solve_exact_vehicle)
from .ped_dynamics import PedScenario
from .topology import ALL_RED, StageCoupling
from .veh_dynamics import VehScenario

DEFAULT_RESOLUTION = Fraction(1, 4)


def as_weight(m) -> Fraction:
    w = Fraction(m) if not isinstance(m, float) else Fraction(m).limit_denominator(10 ** 6)
    if w < 0:
        raise ValueError(f"weight must be non-negative, got {m}")
    return w


@dataclass
class JointTables:
    veh_units: np.ndarray  # (S,) vehicle delay in vehicle-intervals
    ped_units: np.ndarray  # (S,) pedestrian delay in pedestrian-intervals
    n_junctions: int
    steps: int
    n_modes: int

    def schedule(self, index: int) -> np.ndarray:
        return joint_space(self.n_junctions, self.steps, self.n_modes, index, index + 1)[0]


def _units(x) -> np.ndarray:
    r = np.rint(x)
    if not np.allclose(r, x, rtol=0, atol=1e-6):
        raise ValueError("delays are expected to be whole counts per interval")
    return r.astype(np.int64)


def joint_tables(ped: PedScenario, veh: VehScenario, coupling: StageCoupling, steps: int,
                 chunk: int = 1 << 14) -> JointTables:
    """Vehicle and pedestrian delay of every joint schedule."""
    n_j = veh.network.n_junctions
    if ped.n_junctions != n_j:
        raise ValueError("pedestrian and vehicle scenarios cover different junction counts")
    n_modes = len(coupling.joint_modes)
    total = joint_size(n_j, steps, n_modes)
    if total > ENUM_NODE_CAP:
        raise SolverGuard(f"{total} joint schedules exceed the exact integration cap of {ENUM_NODE_CAP}")
    _, ped_table = ped_cost_table(ped, "delay", steps, options=coupling.ped_map)
    ped_table = _units(ped_table / ped.delta)
    powers = n_modes ** np.arange(steps - 1, -1, -1, dtype=np.int64)
    veh_model = VehStepModel(veh, steps, coupling.veh_map)
    v = np.empty(total, dtype=np.int64)
    p = np.empty(total, dtype=np.int64)
    for start in range(0, total, chunk):
        joint = joint_space(n_j, steps, n_modes, start, start + chunk)
        stop = start + len(joint)
        v[start:stop] = _units(veh_model.batch(joint) / veh.delta)
        codes = joint @ powers
        p[start:stop] = ped_table[np.arange(n_j), codes].sum(axis=1)
    return JointTables(v, p, n_j, steps, n_modes)


@dataclass
class WeightedProblem:
    ped: PedScenario
    veh: VehScenario
    coupling: StageCoupling = field(default_factory=StageCoupling)
    weight: Fraction = Fraction(0)
    steps: int = 2
    tables: JointTables | None = None

    def __post_init__(self):
        self.weight = as_weight(self.weight)
        if self.tables is None:
            self.tables = joint_tables(self.ped, self.veh, self.coupling, self.steps)
        if self.p_max_units <= 0 or self.v_max_units <= 0:
            raise ValueError("degenerate scenario: a maximal delay is zero, so the scaled cost is undefined")

    @property
    def p_max_units(self) -> int:
        return int(self.tables.ped_units.max())

    @property
    def v_max_units(self) -> int:
        return int(self.tables.veh_units.max())

    @property
    def p_max(self) -> float:
        return self.p_max_units * self.ped.delta

    @property
    def v_max(self) -> float:
        return self.v_max_units * self.veh.delta

    def with_weight(self, m) -> "WeightedProblem":
        return WeightedProblem(self.ped, self.veh, self.coupling, as_weight(m), self.steps, self.tables)

    def scores(self, m=None) -> np.ndarray:
        """Integer scores proportional to U for every joint schedule."""
        w = self.weight if m is None else as_weight(m)
        a, b = w.numerator, w.denominator
        t = self.tables
        bound = b * int(t.veh_units.max()) * self.p_max_units + a * self.p_max_units * self.v_max_units
        if bound < 2 ** 62:
            return b * t.veh_units * self.p_max_units + a * t.ped_units * self.v_max_units
        return (b * t.veh_units.astype(object) * self.p_max_units
                + a * t.ped_units.astype(object) * self.v_max_units)


@dataclass
class WeightedCosts:
    u: Fraction
    p_ratio: Fraction
    v_ratio: Fraction
    ped_delay: float
    veh_delay: float


def scaled_cost_values(ped_delay: float, veh_delay: float, p_max: float, v_max: float, m) -> tuple:
    """(U, P ratio, V ratio) from raw delays and maxima."""
    if p_max == 0 or v_max == 0:
        raise ValueError("scale denominators must be non-zero")
    p_ratio = ped_delay / abs(p_max)
    v_ratio = veh_delay / abs(v_max)
    return v_ratio + float(as_weight(m)) * p_ratio, p_ratio, v_ratio


def costs_at(problem: WeightedProblem, index: int, m=None) -> WeightedCosts:
    w = problem.weight if m is None else as_weight(m)
    t = problem.tables
    v_ratio = Fraction(int(t.veh_units[index]), problem.v_max_units)
    p_ratio = Fraction(int(t.ped_units[index]), problem.p_max_units)
    return WeightedCosts(v_ratio + w * p_ratio, p_ratio, v_ratio,
                         int(t.ped_units[index]) * problem.ped.delta, int(t.veh_units[index]) * problem.veh.delta)


def scaled_cost(joint_schedule, problem: WeightedProblem) -> WeightedCosts:
    """Costs of one joint-mode schedule (J, N)."""
    s = np.asarray(joint_schedule, dtype=np.int64)
    n_modes = problem.tables.n_modes
    flat = s.T.reshape(-1)
    index = int(flat @ (n_modes ** np.arange(len(flat) - 1, -1, -1, dtype=np.int64)))
    return costs_at(problem, index)


def joint_feasible(ped_schedule, veh_schedule, coupling: StageCoupling) -> bool:
    """True iff each junction-interval runs one allowed joint mode (or all red when relaxed)."""
    p = np.asarray(ped_schedule)
    v = np.asarray(veh_schedule)
    if p.shape != v.shape:
        raise ValueError("pedestrian and vehicle schedules must have the same shape")
    allowed = set(coupling.joint_modes)
    return all((int(a), int(b)) in allowed for a, b in zip(p.ravel(), v.ravel()))


@dataclass
class WeightedSolution:
    joint: np.ndarray  # (J, N) joint-mode indices
    ped_schedule: np.ndarray
    veh_schedule: np.ndarray
    costs: WeightedCosts
    method: str
    index: int | None = None


def solve_weighted(problem: WeightedProblem, solver: str = "exact", params: DhsParams | None = None,
                   seed: int = 0) -> WeightedSolution:
    if solver == "exact":
        index = int(np.argmin(problem.scores()))
        joint = problem.tables.schedule(index)
        costs = costs_at(problem, index)
    elif solver == "dhs":
        res = dhs_run(_HarmonyView(problem), params or DhsParams(), seed)
        joint = res.schedule
        costs = scaled_cost(joint, problem)
        index = None
    else:
        raise ValueError(f"unknown solver {solver!r}")
    ped, veh = problem.coupling.split(joint)
    return WeightedSolution(joint, ped, veh, costs, solver, index)


class _HarmonyView:
    """Exposes a weighted problem to the harmony search (joint modes as elements)."""

    def __init__(self, problem: WeightedProblem):
        self.problem = problem
        self.n_options = problem.tables.n_modes
        self.n_junctions = problem.tables.n_junctions
        self.steps = problem.steps
        self.n_elements = self.n_junctions * self.steps
        m = problem.weight
        t = problem.tables
        self._u = t.veh_units / problem.v_max_units + float(m) * t.ped_units / problem.p_max_units
        self._powers = self.n_options ** np.arange(self.n_elements - 1, -1, -1, dtype=np.int64)

    def decode(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.int64).reshape(self.n_junctions, self.steps)

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64).reshape(-1, self.n_junctions, self.steps)
        flat = x.transpose(0, 2, 1).reshape(len(x), -1)
        return self._u[flat @ self._powers]


# -- weight sweeps ----------------------------------------------------------

def switching_frequency_profile(schedule) -> float:
    """Mean share of junctions whose signal changes between consecutive intervals."""
    s = np.asarray(schedule)
    if s.ndim != 2 or s.shape[1] < 2:
        raise ValueError("profile switching frequency needs at least two intervals")
    return float((s[:, 1:] != s[:, :-1]).mean())


def switching_frequency_turning(before, after) -> float:
    """Share of junction-interval entries that differ between two schedules."""
    a = np.asarray(before)
    b = np.asarray(after)
    if a.shape != b.shape:
        raise ValueError(f"schedule shapes differ: {a.shape} vs {b.shape}")
    return float((a != b).mean())


def schedule_hash(schedule) -> str:
    s = np.asarray(schedule, dtype=np.int64)
    return hashlib.sha256(s.tobytes() + repr(s.shape).encode()).hexdigest()[:12]


@dataclass
class SweepPoint:
    weight: Fraction
    index: int
    joint: np.ndarray
    veh_schedule: np.ndarray
    costs: WeightedCosts
    turning: bool = False
    sf_turning: float = 0.0


@dataclass
class SweepResult:
    points: list
    coupling_mode: str
    steps: int

    @property
    def weights(self) -> list:
        return [p.weight for p in self.points]

    @property
    def turning_weights(self) -> list:
        return [p.weight for p in self.points if p.turning]

    def rows(self):
        out = [["weight", "U_D", "P_D_ratio", "V_D_ratio", "schedule_hash", "turning", "SF_turning",
                "coupling"]]
        for p in self.points:
            out.append([_wstr(p.weight), repr(float(p.costs.u)), repr(float(p.costs.p_ratio)),
                        repr(float(p.costs.v_ratio)), schedule_hash(p.veh_schedule), int(p.turning),
                        repr(p.sf_turning), self.coupling_mode])
        return out

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            csv.writer(fh).writerows(self.rows())
        return path


def _wstr(w: Fraction) -> str:
    return str(w.numerator) if w.denominator == 1 else repr(float(w))


def sweep_weights(problem: WeightedProblem, grid, refine: bool = True,
                  resolution=DEFAULT_RESOLUTION) -> SweepResult:
    """Exact optimum at every grid weight, with optional bisection of schedule changes."""
    weights = [as_weight(m) for m in grid]
    if not weights or weights[0] != 0 or any(a >= b for a, b in zip(weights, weights[1:])):
        raise ValueError("weight grid must be strictly ascending and start at 0")
    resolution = as_weight(resolution)
    argmin = {}

    def best(w):
        if w not in argmin:
            argmin[w] = int(np.argmin(problem.scores(w)))
        return argmin[w]

    def bisect(lo, hi):
        if best(lo) == best(hi) or hi - lo <= resolution:
            return
        mid = (lo + hi) / 2
        bisect(lo, mid)
        bisect(mid, hi)

    for w in weights:
        best(w)
    if refine:
        for lo, hi in zip(weights, weights[1:]):
            bisect(lo, hi)

    points = []
    prev = None
    for w in sorted(argmin):
        idx = argmin[w]
        joint = problem.tables.schedule(idx)
        _, veh = problem.coupling.split(joint)
        pt = SweepPoint(w, idx, joint, veh, costs_at(problem, idx, w))
        if prev is not None and not np.array_equal(veh, prev.veh_schedule):
            pt.turning = True
            pt.sf_turning = switching_frequency_turning(prev.veh_schedule, veh)
        points.append(pt)
        prev = pt
    return SweepResult(points, problem.coupling.mode, problem.steps)


def saturation_weight(problem: WeightedProblem) -> tuple[Fraction, int]:
    """Smallest ``m_sat`` with one optimal schedule for every ``m > m_sat``, and that schedule.

    For large ``m`` the optimum minimises pedestrian delay first, then vehicle
    delay, then position in the lexicographic order. It stays optimal once
    ``m`` exceeds every crossing weight
    ``(V_inf - V_s) * P_max / ((P_s - P_inf) * V_max)``.
    """
    t = problem.tables
    order = np.lexsort((np.arange(len(t.ped_units)), t.veh_units, t.ped_units))
    inf = int(order[0])
    p_inf, v_inf = int(t.ped_units[inf]), int(t.veh_units[inf])
    better_v = (t.veh_units < v_inf) & (t.ped_units > p_inf)
    if not better_v.any():
        return Fraction(0), inf
    num = (v_inf - t.veh_units[better_v]) * problem.p_max_units
    den = (t.ped_units[better_v] - p_inf) * problem.v_max_units
    m_sat = max(Fraction(int(a), int(b)) for a, b in zip(num, den))
    return m_sat, inf


def pure_optima(problem: WeightedProblem) -> dict:
    """Stand-alone vehicle and pedestrian optima over the same coupled schedule set."""
    veh = solve_exact_vehicle(problem.veh, problem.steps, stage_map=problem.coupling.veh_map)
    ped = solve_exact_network(problem.ped, "delay", problem.steps, options=problem.coupling.ped_map)
    return {"veh_delay": veh.cost, "veh_schedule": veh.schedule, "ped_delay": ped.cost,
            "ped_schedule": ped.schedule}


def coupling_note(coupling: StageCoupling) -> str:
    extra = " (all-red joint mode admitted)" if ALL_RED in coupling.ped_map else ""
    return f"{coupling.mode}{extra}"
