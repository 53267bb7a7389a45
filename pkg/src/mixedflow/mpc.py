"""Receding-horizon control: plan over N intervals, apply the first, advance the plant."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dhs_solver import DhsParams, PedProblem, run as dhs_run
from .exact_solver import solve_exact_network
from .integration import WeightedProblem, solve_weighted
from .ped_dynamics import PedScenario, delay_units, roll, simulate
from .topology import StageCoupling
from .unhappiness import DEFAULT_EXP_CAP, unhappiness_cost
from .veh_dynamics import VehScenario, roll_veh, simulate_veh, vehicle_delay
from .veh_dynamics import delay_units as veh_delay_units

OBJECTIVES = ("delay", "unhappiness", "weighted")


@dataclass
class MpcRun:
    horizon: int
    steps: int
    solver: str
    objective: str
    applied: np.ndarray  # (J, T) pedestrian stages actually run
    veh_applied: np.ndarray | None  # (J, T) vehicle stages, weighted runs only
    step_ped_delay: list  # realised pedestrian delay per interval, ped-seconds
    step_veh_delay: list
    plans: list = field(default_factory=list)  # planned (J, N) schedule at each step
    final_ped_volume: np.ndarray | None = None
    final_veh_volume: np.ndarray | None = None
    ped_cost: float = 0.0  # realised objective over the whole run
    veh_cost: float = 0.0

    def rows(self):
        out = [["interval", "junction", "ped_stage", "veh_stage", "ped_delay", "veh_delay"]]
        for k in range(self.steps):
            for j in range(self.applied.shape[0]):
                veh = int(self.veh_applied[j, k]) if self.veh_applied is not None else ""
                out.append([k + 1, j, int(self.applied[j, k]), veh,
                            _num(self.step_ped_delay[k]), _num(self.step_veh_delay[k])])
        return out

    def summary(self) -> dict:
        return {"horizon": self.horizon, "steps": self.steps, "solver": self.solver,
                "objective": self.objective, "ped_cost": self.ped_cost, "veh_cost": self.veh_cost,
                "step_ped_delay": self.step_ped_delay, "step_veh_delay": self.step_veh_delay}


def _num(x):
    x = float(x)
    return int(x) if x.is_integer() else repr(x)


def _noisy(arrivals: np.ndarray, sigma: float, rng) -> np.ndarray:
    if sigma <= 0:
        return arrivals
    factor = np.maximum(1.0 + sigma * rng.standard_normal(arrivals.shape), 0.0)
    return np.floor(arrivals * factor + 0.5).astype(np.int64)


def _plan(objective, solver, ped_win, veh_win, coupling, weight, horizon, params, seed, in_seconds, cap):
    if objective == "weighted":
        problem = WeightedProblem(ped_win, veh_win, coupling, weight, horizon)
        sol = solve_weighted(problem, solver, params, seed)
        return sol.ped_schedule, sol.veh_schedule
    if solver == "exact":
        return solve_exact_network(ped_win, objective, horizon, in_seconds=in_seconds, cap=cap).schedule, None
    if solver == "dhs":
        problem = PedProblem(ped_win, objective, horizon, in_seconds, cap)
        return dhs_run(problem, params or DhsParams(), seed).schedule, None
    raise ValueError(f"unknown solver {solver!r}")


def run_mpc(plant: PedScenario, horizon: int, solver: str = "exact", objective: str = "delay",
            steps: int | None = None, veh_plant: VehScenario | None = None,
            coupling: StageCoupling | None = None, weight=0, params: DhsParams | None = None,
            seed: int = 0, noise: float = 0.0, in_seconds: bool = True,
            cap: float = DEFAULT_EXP_CAP) -> MpcRun:
    """Run ``steps`` receding-horizon steps (default: the plant's interval count).

    ``noise`` is the standard deviation of a multiplicative error applied to
    predicted arrivals; the plant always advances on the true demand.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}")
    if horizon < 1:
        raise ValueError("horizon must be at least one interval")
    if objective == "weighted" and veh_plant is None:
        raise ValueError("weighted control needs a vehicle plant")
    n_steps = plant.intervals if steps is None else steps
    coupling = coupling or StageCoupling()
    rng = np.random.default_rng(seed)
    caps = plant.capacities()

    vol = plant.initial_volume.copy()
    prev = plant.history.copy()
    veh_vol = veh_plant.initial_volume.copy() if veh_plant is not None else None
    veh_hist = veh_plant.history.copy() if veh_plant is not None else None
    applied = np.zeros((plant.n_junctions, n_steps), dtype=np.int64)
    veh_applied = np.zeros_like(applied) if objective == "weighted" else None
    ped_steps, veh_steps, plans = [], [], []

    for k in range(n_steps):
        ped_win = plant.window(k, horizon, initial_volume=vol, history=prev)
        if noise > 0:
            ped_win.arrivals = _noisy(ped_win.arrivals, noise, rng)
        veh_win = None
        if veh_plant is not None:
            veh_win = veh_plant.window(k, horizon, initial_volume=veh_vol, history=veh_hist)
        ped_plan, veh_plan = _plan(objective, solver, ped_win, veh_win, coupling, weight, horizon,
                                   params, seed + k, in_seconds, cap)
        plans.append(ped_plan if veh_plan is None else np.stack([ped_plan, veh_plan]))
        stage = ped_plan[:, 0]
        applied[:, k] = stage

        true = plant.window(k, 1, initial_volume=vol, history=prev)
        res = roll(vol, true.arrivals, true.alpha, true.gamma, stage[:, None], prev, caps)
        ped_steps.append(float(delay_units(res["volumes"], res["out"]).sum()) * plant.delta)
        vol, prev = res["volumes"][:, -1], stage

        if veh_plant is not None:
            if veh_plan is not None:
                vstage = veh_plan[:, 0]
            else:
                # vehicles follow the joint mode paired with the chosen pedestrian stage
                pair = {int(p): int(v) for p, v in reversed(coupling.joint_modes)}
                vstage = np.array([pair[int(x)] for x in stage], dtype=np.int64)
            if veh_applied is not None:
                veh_applied[:, k] = vstage
            vwin = veh_plant.window(k, 1, initial_volume=veh_vol, history=veh_hist)
            vres = roll_veh(vwin, vstage[:, None])
            veh_steps.append(float(veh_delay_units(vres["volumes"], vres["out"], veh_plant.travel_ratio()))
                             * veh_plant.delta)
            veh_vol = vres["volumes"][-1]
            if veh_hist.shape[1]:
                veh_hist = np.concatenate([veh_hist[:, 1:], vstage[:, None]], axis=1)
        else:
            veh_steps.append(0.0)

    run = MpcRun(horizon, n_steps, solver, objective, applied, veh_applied, ped_steps, veh_steps, plans,
                 final_ped_volume=vol, final_veh_volume=veh_vol)
    full = plant.window(0, n_steps)
    trace = simulate(full, applied)
    run.ped_cost = (unhappiness_cost(trace, in_seconds, cap) if objective == "unhappiness"
                    else float(sum(ped_steps)))
    run.veh_cost = float(sum(veh_steps))
    return run


def fixed_stage_cost(plant: PedScenario, stage: int, steps: int | None = None, objective: str = "delay",
                     in_seconds: bool = True, cap: float = DEFAULT_EXP_CAP) -> float:
    """Realised cost of holding one stage at every junction for the whole run."""
    n = plant.intervals if steps is None else steps
    full = plant.window(0, n)
    trace = simulate(full, np.full((plant.n_junctions, n), stage))
    if objective == "unhappiness":
        return unhappiness_cost(trace, in_seconds, cap)
    return float(delay_units(trace.volumes, trace.out).sum()) * plant.delta


def replay_vehicle(veh_plant: VehScenario, schedule) -> float:
    """Vehicle delay of ``schedule`` simulated directly from the initial state."""
    s = np.asarray(schedule)
    return vehicle_delay(simulate_veh(veh_plant.window(0, s.shape[1]), s))
