"""Exact schedule search: vectorised enumeration and depth-first branch-and-bound.

Schedules are ordered lexicographically over the stage options (Horizontal
before Vertical), and joint schedules over the flattened interval-major
vector ``(k=1: j=0..J-1, k=2: ...)``. Enumeration keeps the first minimum it
meets and branch-and-bound visits leaves in the same order and only replaces
the incumbent on strict improvement, so both return the same schedule.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .ped_dynamics import PedScenario, delay_units, roll
from .topology import STAGES
from .unhappiness import DEFAULT_EXP_CAP, RedRunTracker, exp_table
from .veh_dynamics import VehScenario, roll_veh
from .veh_dynamics import delay_units as veh_delay_units

OBJECTIVES = ("delay", "unhappiness")
MAX_ENUM_STEPS = 24
ENUM_NODE_CAP = 2 ** 20
DEFAULT_NODE_BUDGET = 2_000_000
_CHUNK_ELEMS = 1 << 16


class SolverGuard(RuntimeError):
    """Problem too large for the requested exact method."""


@dataclass
class SearchNode:
    prefix: tuple  # per-interval mode vectors chosen so far
    cost: Any  # accumulated cost of the prefix
    bound: Any  # lower bound on the best completion (cost + 0)
    state: Any = None


@dataclass
class ExactResult:
    schedule: np.ndarray  # (J, N) stage or joint-mode indices
    cost: float
    method: str
    nodes: int = 0
    certified: bool = True
    junction_costs: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


def schedule_space(n_options: int, length: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Option indices of schedules ``start..stop`` in lexicographic order, shape (S, length)."""
    total = n_options ** length
    stop = total if stop is None else min(stop, total)
    codes = np.arange(start, stop, dtype=np.int64)
    powers = n_options ** np.arange(length - 1, -1, -1, dtype=np.int64)
    return (codes[:, None] // powers) % n_options


def _check_objective(objective: str):
    if objective not in OBJECTIVES:
        raise ValueError(f"pedestrian objective must be one of {OBJECTIVES}, got {objective!r}")


def _guard_steps(steps: int):
    if steps > MAX_ENUM_STEPS:
        raise SolverGuard(f"horizon of {steps} intervals exceeds the enumeration guard of {MAX_ENUM_STEPS}")


def _steps(scenario, steps):
    n = scenario.intervals if steps is None else steps
    if n < 1 or n > scenario.intervals:
        raise ValueError(f"steps must lie in 1..{scenario.intervals}, got {n}")
    return n


def ped_costs(scenario: PedScenario, stages: np.ndarray, objective: str, table=None) -> np.ndarray:
    """Per-junction cost of stage sequences ``stages`` with shape ``(J, S, N)``; returns (J, S)."""
    n = stages.shape[-1]
    sl = slice(0, n)
    res = roll(scenario.initial_volume[:, None], scenario.arrivals[:, None, sl], scenario.alpha[:, None, sl],
               scenario.gamma[:, None, sl], stages, scenario.history[:, None], scenario.capacities())
    if objective == "delay":
        return delay_units(res["volumes"], res["out"]) * scenario.delta
    tracker = RedRunTracker(stages.shape[:-1], table)
    ratios = scenario.ratios()[:, None, sl]
    for k in range(n):
        tracker.push(stages[..., k], res["volumes"][..., k, :], ratios[..., k, :, :])
    return tracker.finish()


def ped_cost_table(scenario: PedScenario, objective: str, steps: int | None = None,
                   options=STAGES, in_seconds: bool = True, cap: float = DEFAULT_EXP_CAP):
    """Cost of every stage sequence at every junction.

    Returns ``(codes, costs)``: option indices (S, N) in lexicographic order
    and costs (J, S).
    """
    _check_objective(objective)
    n = _steps(scenario, steps)
    _guard_steps(n)
    options = np.asarray(options, dtype=np.int64)
    table = exp_table(n, scenario.delta, in_seconds, cap) if objective == "unhappiness" else None
    total = len(options) ** n
    n_j = scenario.n_junctions
    chunk = max(1, _CHUNK_ELEMS // n_j)
    costs = np.empty((n_j, total))
    for start in range(0, total, chunk):
        codes = schedule_space(len(options), n, start, start + chunk)
        stages = np.broadcast_to(options[codes], (n_j,) + codes.shape)
        costs[:, start:start + len(codes)] = ped_costs(scenario, stages, objective, table)
    return schedule_space(len(options), n), costs


def _first_argmin(costs: np.ndarray) -> np.ndarray:
    return np.argmin(costs, axis=-1)


# -- pedestrian search ------------------------------------------------------

class PedStepModel:
    """Interval-by-interval pedestrian cost for branch-and-bound over all junctions."""

    def __init__(self, scenario: PedScenario, objective: str, steps: int, options=STAGES,
                 in_seconds: bool = True, cap: float = DEFAULT_EXP_CAP):
        _check_objective(objective)
        self.sc = scenario
        self.objective = objective
        self.options = np.asarray(options, dtype=np.int64)
        self.steps = steps
        self.caps = scenario.capacities()
        self.ratios = scenario.ratios()
        self.table = exp_table(steps, scenario.delta, in_seconds, cap) if objective == "unhappiness" else None

    def initial(self):
        j = self.sc.n_junctions
        tracker = RedRunTracker((j,), self.table) if self.table is not None else None
        return (self.sc.initial_volume.copy(), self.sc.history.copy(), tracker, 0, 0)

    def advance(self, state, modes):
        vol, prev, tracker, k, units = state
        stage = self.options[np.asarray(modes)]
        sl = slice(k, k + 1)
        res = roll(vol, self.sc.arrivals[:, sl], self.sc.alpha[:, sl], self.sc.gamma[:, sl],
                   stage[:, None], prev, self.caps)
        if tracker is not None:
            tracker = tracker.copy()
            tracker.push(stage, vol, self.ratios[:, k])
            acc = float(tracker.closed_cost().sum())
        else:
            units = units + int(delay_units(res["volumes"], res["out"]).sum())
            acc = units * self.sc.delta
        return (res["volumes"][:, -1], stage, tracker, k + 1, units), acc

    def final(self, state):
        _, _, tracker, _, units = state
        if tracker is None:
            return units * self.sc.delta
        return float(tracker.copy().finish().sum())

    def batch(self, joint: np.ndarray) -> np.ndarray:
        stages = np.moveaxis(self.options[joint], 0, 1)  # (J, S, N)
        return ped_costs(self.sc, stages, self.objective, self.table).sum(axis=0)


def solve_exact_junction(scenario: PedScenario, j: int, objective: str = "delay", steps: int | None = None,
                         method: str = "enumerate", options=STAGES, in_seconds: bool = True,
                         cap: float = DEFAULT_EXP_CAP, prune: bool = True) -> ExactResult:
    """Optimal stage sequence for junction ``j`` alone."""
    _check_objective(objective)
    n = _steps(scenario, steps)
    _guard_steps(n)
    sub = scenario.select([j])
    options = np.asarray(options, dtype=np.int64)
    if method == "enumerate":
        codes, costs = ped_cost_table(sub, objective, n, options, in_seconds, cap)
        best = int(_first_argmin(costs[0]))
        return ExactResult(options[codes[best]][None], float(costs[0, best]), "enumerate", nodes=len(codes))
    if method == "bnb":
        model = PedStepModel(sub, objective, n, options, in_seconds, cap)
        res = branch_and_bound(model, 1, n, len(options), prune=prune)
        res.schedule = options[res.schedule]
        return res
    raise ValueError(f"unknown method {method!r}")


def solve_exact_network(scenario: PedScenario, objective: str = "delay", steps: int | None = None,
                        options=STAGES, in_seconds: bool = True, cap: float = DEFAULT_EXP_CAP) -> ExactResult:
    """Network optimum as the concatenation of independent junction optima."""
    if objective not in OBJECTIVES:
        raise ValueError(f"network decomposition only holds for pedestrian objectives {OBJECTIVES}; "
                         f"solve {objective!r} through the integration module")
    n = _steps(scenario, steps)
    options = np.asarray(options, dtype=np.int64)
    codes, costs = ped_cost_table(scenario, objective, n, options, in_seconds, cap)
    best = _first_argmin(costs)
    per = costs[np.arange(scenario.n_junctions), best]
    return ExactResult(options[codes[best]], float(per.sum()), "decomposed", nodes=costs.size,
                       junction_costs=per)


def maximize_cost(scenario: PedScenario, objective: str = "delay", steps: int | None = None,
                  options=STAGES, in_seconds: bool = True, cap: float = DEFAULT_EXP_CAP) -> float:
    """Largest attainable network cost; junctions are independent so maxima add up."""
    _, costs = ped_cost_table(scenario, objective, steps, options, in_seconds, cap)
    return float(costs.max(axis=1).sum())


# -- joint search (vehicle and coupled problems) ----------------------------

def joint_space(n_junctions: int, steps: int, n_modes: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Joint schedules ``(S, J, N)`` ordered lexicographically over the interval-major vector."""
    flat = schedule_space(n_modes, n_junctions * steps, start, stop)
    return flat.reshape(-1, steps, n_junctions).transpose(0, 2, 1)


def joint_size(n_junctions: int, steps: int, n_modes: int) -> int:
    return n_modes ** (n_junctions * steps)


def enumerate_joint(batch_cost: Callable, n_junctions: int, steps: int, n_modes: int,
                    chunk: int = 1 << 14, threads: int = 1, keep_all: bool = False):
    """Evaluate every joint schedule; returns ``(best_schedule, best_cost, costs or None)``."""
    total = joint_size(n_junctions, steps, n_modes)
    if total > ENUM_NODE_CAP:
        raise SolverGuard(f"{total} joint schedules exceed the enumeration cap of {ENUM_NODE_CAP}")
    starts = list(range(0, total, chunk))

    def run(start):
        return batch_cost(joint_space(n_junctions, steps, n_modes, start, start + chunk))

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    costs = np.concatenate(parts)
    best = int(np.argmin(costs))
    schedule = joint_space(n_junctions, steps, n_modes, best, best + 1)[0]
    return schedule, costs[best], (costs if keep_all else None)


def branch_and_bound(model, n_junctions: int, steps: int, n_modes: int,
                     budget: int | None = DEFAULT_NODE_BUDGET, prune: bool = True) -> ExactResult:
    """Depth-first search over interval-wise mode vectors with a zero remaining-cost bound.

    ``model`` supplies ``initial()``, ``advance(state, modes) -> (state, acc)``
    with a non-decreasing ``acc``, and ``final(state)``. When the node budget
    runs out the best schedule found so far is returned with
    ``certified=False``.
    """
    children = schedule_space(n_modes, n_junctions)
    best_cost = None
    best_prefix = None
    nodes = 0
    certified = True
    stack = [SearchNode(prefix=(), cost=0, bound=0, state=model.initial())]
    while stack:
        node = stack.pop()
        if len(node.prefix) == steps:
            final = model.final(node.state)
            if best_cost is None or final < best_cost:
                best_cost, best_prefix = final, node.prefix
            continue
        expanded = []
        for modes in children:
            if budget is not None and nodes >= budget:
                certified = False
                break
            nodes += 1
            state, acc = model.advance(node.state, modes)
            if prune and best_cost is not None and acc >= best_cost:
                continue
            expanded.append(SearchNode(node.prefix + (modes,), acc, acc, state))
        if not certified:
            break
        # push in reverse so the lexicographically first child is expanded first
        stack.extend(reversed(expanded))
    if best_prefix is None:
        raise SolverGuard("node budget exhausted before any complete schedule was found")
    schedule = np.stack(best_prefix, axis=1) if steps else np.zeros((n_junctions, 0), dtype=np.int64)
    return ExactResult(np.asarray(schedule, dtype=np.int64), best_cost, "bnb", nodes=nodes, certified=certified)


class VehStepModel:
    """Interval-by-interval vehicle delay (in vehicle-seconds) for branch-and-bound."""

    def __init__(self, scenario: VehScenario, steps: int, stage_map=STAGES):
        self.sc = scenario
        self.steps = steps
        self.stage_map = np.asarray(stage_map, dtype=np.int64)
        self.ratio = scenario.travel_ratio()

    def initial(self):
        return (self.sc.initial_volume.copy(), self.sc.history.copy(), 0, 0.0)

    def advance(self, state, modes):
        vol, hist, k, units = state
        stage = self.stage_map[np.asarray(modes)]
        win = self.sc.window(k, 1, initial_volume=vol, history=hist)
        res = roll_veh(win, stage[:, None])
        units = units + float(veh_delay_units(res["volumes"], res["out"], self.ratio))
        if hist.shape[1]:
            hist = np.concatenate([hist[:, 1:], stage[:, None]], axis=1)
        return (res["volumes"][-1], hist, k + 1, units), units * self.sc.delta

    def final(self, state):
        return state[3] * self.sc.delta

    def batch(self, joint: np.ndarray) -> np.ndarray:
        res = roll_veh(self.sc.window(0, self.steps), self.stage_map[joint])
        return veh_delay_units(res["volumes"], res["out"], self.ratio) * self.sc.delta


def solve_joint(model, n_junctions: int, steps: int, n_modes: int, budget: int | None = DEFAULT_NODE_BUDGET,
                threads: int = 1) -> ExactResult:
    """Joint enumeration when the space fits the cap, else budgeted branch-and-bound."""
    if joint_size(n_junctions, steps, n_modes) <= ENUM_NODE_CAP:
        schedule, cost, _ = enumerate_joint(model.batch, n_junctions, steps, n_modes, threads=threads)
        return ExactResult(schedule, float(cost), "enumerate", nodes=joint_size(n_junctions, steps, n_modes))
    return branch_and_bound(model, n_junctions, steps, n_modes, budget)


def solve_exact_vehicle(scenario: VehScenario, steps: int | None = None, stage_map=STAGES,
                        budget: int | None = DEFAULT_NODE_BUDGET, threads: int = 1) -> ExactResult:
    n = _steps(scenario, steps)
    model = VehStepModel(scenario, n, stage_map)
    return solve_joint(model, scenario.network.n_junctions, n, len(stage_map), budget, threads)


def maximize_vehicle_cost(scenario: VehScenario, steps: int | None = None, stage_map=STAGES) -> float:
    """Largest vehicle delay over all joint schedules (enumeration only)."""
    n = _steps(scenario, steps)
    model = VehStepModel(scenario, n, stage_map)
    _, _, costs = enumerate_joint(model.batch, scenario.network.n_junctions, n, len(stage_map), keep_all=True)
    return float(costs.max())
