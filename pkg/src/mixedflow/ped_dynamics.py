"""Pedestrian hopping model: crosswalk capacity, hopping flows, corner volumes.

Units: volumes, capacities and flows are integer pedestrian counts per
interval (a flow rate times the sampling interval). Arrivals are likewise
stored as counts per interval. Delay is in pedestrian-seconds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .topology import ALL_RED, HORIZONTAL, N_CORNERS, PARTNER, STAGE_NAMES, VERTICAL, validate_schedule

# HCM platoon regression slopes (seconds per pedestrian)
NARROW_SLOPE = 0.27
WIDE_SLOPE = 0.81
NARROW_WIDTH = 3.0

_FLOOR_SLACK = 1e-9


def ifloor(x):
    """Floor that tolerates representation error, e.g. 0.29 * 100."""
    if isinstance(x, np.ndarray):
        return np.floor(x + _FLOOR_SLACK).astype(np.int64)
    return math.floor(x + _FLOOR_SLACK)


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class CrosswalkGeometry:
    length: float = 8.5  # m
    width: float = 4.0  # m
    walk_speed: float = 1.2  # m/s
    startup: float = 3.2  # s

    def __post_init__(self):
        for name in ("length", "width", "walk_speed", "startup"):
            if not getattr(self, name) > 0:
                raise GeometryError(f"crosswalk {name} must be positive")

    @property
    def walk_time(self) -> float:
        return self.length / self.walk_speed

    @property
    def rate(self) -> float:
        """Pedestrians per second of platoon discharge (``n`` in the MILP rows)."""
        if self.width <= NARROW_WIDTH:
            return 1.0 / NARROW_SLOPE
        return self.width / WIDE_SLOPE


def crossing_time(n_ped: float, geometry: CrosswalkGeometry) -> float:
    """Seconds for a platoon of ``n_ped`` pedestrians to clear the crosswalk."""
    if n_ped < 0:
        raise ValueError("platoon size must be non-negative")
    base = geometry.startup + geometry.walk_time
    if geometry.width <= NARROW_WIDTH:
        return base + NARROW_SLOPE * n_ped
    return base + WIDE_SLOPE * n_ped / geometry.width


def _platoon_size(seconds: float, geometry: CrosswalkGeometry) -> int:
    if geometry.width <= NARROW_WIDTH:
        return ifloor(seconds / NARROW_SLOPE)
    return ifloor(seconds * geometry.width / WIDE_SLOPE)


def capacity_pair(geometry: CrosswalkGeometry, delta: float) -> tuple[int, int]:
    """(first-green, continuing-green) crossing capacity for one interval."""
    usable = delta - geometry.startup - geometry.walk_time
    if usable <= 0:
        raise GeometryError(
            f"interval {delta}s too short: start-up plus walk time is "
            f"{geometry.startup + geometry.walk_time:.4f}s"
        )
    return _platoon_size(usable, geometry), _platoon_size(delta, geometry)


def capacity(k: int, prev_green: bool, geometry: CrosswalkGeometry, delta: float) -> int:
    """Capacity of a stage in interval ``k`` (1-based) given whether it was green at k-1."""
    if k < 1:
        raise ValueError("interval index is 1-based")
    first, cont = capacity_pair(geometry, delta)
    if k == 1 or not prev_green:
        return first
    return cont


def hopping_flow(volume: int, ratio: float, cap: int, green: bool) -> int:
    """Pedestrians moved across one crosswalk in an interval."""
    if not green:
        return 0
    return min(cap, ifloor(volume * ratio))


def step_volumes(volumes, out_flows, stage: int, arrivals, gamma):
    """Advance the four corner volumes of one junction by one interval.

    ``out_flows[i]`` is the count leaving corner ``i`` over the green crosswalk.
    Returns ``(next_volumes, inflow, departures)``.
    """
    volumes = np.asarray(volumes, dtype=np.int64)
    out_flows = np.asarray(out_flows, dtype=np.int64)
    if stage == ALL_RED:
        inflow = np.zeros(N_CORNERS, dtype=np.int64)
    else:
        inflow = out_flows[PARTNER[stage]]
    departures = ifloor(np.asarray(gamma, dtype=float) * inflow)
    nxt = volumes + np.asarray(arrivals, dtype=np.int64) + inflow - out_flows - departures
    if (nxt < 0).any():
        raise ValueError(f"negative corner volume {nxt.tolist()}: flows exceed waiting pedestrians")
    return nxt, inflow, departures


@dataclass
class PedScenario:
    """Pedestrian demand for every junction.

    Arrays are indexed ``[junction, interval, corner]``; ``history[j]`` is the
    stage that was green just before interval 1 (``ALL_RED`` if unknown).
    """

    initial_volume: np.ndarray  # (J, 4) int
    arrivals: np.ndarray  # (J, T, 4) int counts per interval
    alpha: np.ndarray  # (J, T, 4) horizontal diversion ratio
    gamma: np.ndarray  # (J, T, 4) departure ratio
    geometry: CrosswalkGeometry = field(default_factory=CrosswalkGeometry)
    delta: float = 15.0
    history: np.ndarray | None = None

    def __post_init__(self):
        self.initial_volume = np.asarray(self.initial_volume, dtype=np.int64)
        self.arrivals = np.asarray(self.arrivals, dtype=np.int64)
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        n_j = self.initial_volume.shape[0]
        if self.history is None:
            self.history = np.full(n_j, ALL_RED, dtype=np.int64)
        self.history = np.asarray(self.history, dtype=np.int64)
        if self.initial_volume.shape != (n_j, N_CORNERS):
            raise ValueError("initial_volume must have shape (junctions, 4)")
        shape = self.arrivals.shape
        if len(shape) != 3 or shape[0] != n_j or shape[2] != N_CORNERS:
            raise ValueError("arrivals must have shape (junctions, intervals, 4)")
        for name in ("alpha", "gamma"):
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} must match arrivals shape {shape}")
            if ((arr < 0) | (arr > 1)).any():
                raise ValueError(f"{name} ratios must lie in [0, 1]")
        if (self.initial_volume < 0).any() or (self.arrivals < 0).any():
            raise ValueError("volumes and arrivals must be non-negative")
        if self.history.shape != (n_j,):
            raise ValueError("history must hold one stage per junction")
        capacity_pair(self.geometry, self.delta)

    @property
    def n_junctions(self) -> int:
        return self.initial_volume.shape[0]

    @property
    def intervals(self) -> int:
        return self.arrivals.shape[1]

    @property
    def beta(self) -> np.ndarray:
        return 1.0 - self.alpha

    def ratios(self) -> np.ndarray:
        """Diversion ratio per stage: shape (J, T, 2, 4)."""
        return np.stack([self.alpha, self.beta], axis=2)

    def capacities(self) -> tuple[int, int]:
        return capacity_pair(self.geometry, self.delta)

    def window(self, start: int, steps: int, initial_volume=None, history=None) -> "PedScenario":
        """Sub-scenario of ``steps`` intervals from ``start``; demand past the end holds the last value."""
        idx = np.minimum(np.arange(start, start + steps), self.intervals - 1)
        return replace(
            self,
            initial_volume=self.initial_volume if initial_volume is None else initial_volume,
            arrivals=self.arrivals[:, idx],
            alpha=self.alpha[:, idx],
            gamma=self.gamma[:, idx],
            history=self.history if history is None else history,
        )

    def select(self, junctions) -> "PedScenario":
        junctions = list(junctions)
        return replace(
            self,
            initial_volume=self.initial_volume[junctions],
            arrivals=self.arrivals[junctions],
            alpha=self.alpha[junctions],
            gamma=self.gamma[junctions],
            history=self.history[junctions],
        )


def roll(init, arrivals, alpha, gamma, stages, history, caps):
    """Vectorised hopping-model roll-out.

    ``stages`` has shape ``batch + (N,)``; demand arrays broadcast against
    ``batch + (N, 4)`` and ``init`` against ``batch + (4,)``. Returns a dict of
    arrays: volumes ``batch+(N+1,4)``, out/inflow/departures ``batch+(N,4)``,
    capacities ``batch+(N,2)``.
    """
    stages = np.asarray(stages, dtype=np.int64)
    batch, n = stages.shape[:-1], stages.shape[-1]
    first, cont = caps
    vol = np.broadcast_to(np.asarray(init, dtype=np.int64), batch + (N_CORNERS,)).copy()
    prev = np.broadcast_to(np.asarray(history, dtype=np.int64), batch).copy()
    arrivals = np.broadcast_to(arrivals, batch + (n, N_CORNERS))
    alpha = np.broadcast_to(alpha, batch + (n, N_CORNERS))
    gamma = np.broadcast_to(gamma, batch + (n, N_CORNERS))

    volumes = np.empty(batch + (n + 1, N_CORNERS), dtype=np.int64)
    out = np.empty(batch + (n, N_CORNERS), dtype=np.int64)
    inflow = np.empty_like(out)
    departures = np.empty_like(out)
    caps_k = np.empty(batch + (n, 2), dtype=np.int64)
    volumes[..., 0, :] = vol
    for k in range(n):
        st = stages[..., k]
        cap_h = np.where(prev == HORIZONTAL, cont, first)
        cap_v = np.where(prev == VERTICAL, cont, first)
        caps_k[..., k, 0] = cap_h
        caps_k[..., k, 1] = cap_v
        horiz = (st == HORIZONTAL)[..., None]
        eta = np.where(horiz, alpha[..., k, :], 1.0 - alpha[..., k, :])
        cap = np.where(st == HORIZONTAL, cap_h, cap_v)[..., None]
        f = np.minimum(cap, ifloor(vol * eta))
        f = np.where((st == ALL_RED)[..., None], 0, f)
        inc = np.where(horiz, f[..., PARTNER[HORIZONTAL]], f[..., PARTNER[VERTICAL]])
        dep = ifloor(gamma[..., k, :] * inc)
        vol = vol + arrivals[..., k, :] + inc - f - dep
        out[..., k, :] = f
        inflow[..., k, :] = inc
        departures[..., k, :] = dep
        volumes[..., k + 1, :] = vol
        prev = st
    return {"volumes": volumes, "out": out, "inflow": inflow,
            "departures": departures, "capacities": caps_k}


@dataclass
class PedTrace:
    schedule: np.ndarray  # (J, N)
    volumes: np.ndarray  # (J, N+1, 4); index k-1 holds P(k)
    out: np.ndarray  # (J, N, 4) count leaving each corner
    inflow: np.ndarray
    departures: np.ndarray
    capacities: np.ndarray  # (J, N, 2)
    ratios: np.ndarray  # (J, N, 2, 4) diversion ratio by stage
    arrivals: np.ndarray  # (J, N, 4)
    delta: float

    @property
    def steps(self) -> int:
        return self.schedule.shape[1]

    @property
    def step_delay(self) -> np.ndarray:
        """Pedestrian-seconds per junction and interval."""
        return (self.volumes[:, :-1, :] - self.out).sum(axis=2) * self.delta

    def flow(self, j: int, k: int, src: int, dst: int) -> int:
        """Count on stream ``src -> dst`` at junction ``j`` in interval ``k`` (0-based)."""
        st = self.schedule[j, k]
        if st == ALL_RED or PARTNER[st, src] != dst:
            return 0
        return int(self.out[j, k, src])

    def csv_rows(self, unhappy=None):
        header = ["junction", "interval", "corner", "volume", "stage", "capacity", "flow_count", "step_delay"]
        if unhappy is not None:
            header += ["phi", "p_bar", "unhappiness_term"]
        rows = [header]
        for j in range(self.schedule.shape[0]):
            for k in range(self.steps):
                st = int(self.schedule[j, k])
                cap = int(self.capacities[j, k, st]) if st != ALL_RED else 0
                for i in range(N_CORNERS):
                    vol = int(self.volumes[j, k, i])
                    f = int(self.out[j, k, i])
                    row = [j, k + 1, i + 1, vol, STAGE_NAMES[st], cap, f, (vol - f) * _num(self.delta)]
                    if unhappy is not None:
                        phi, pbar, term = unhappy.corner_row(j, k, i)
                        row += [phi, _fmt(pbar), _fmt(term)]
                    rows.append(row)
        return rows


def _num(x):
    return int(x) if float(x).is_integer() else x


def _fmt(x: float) -> str:
    return repr(float(x))


def simulate(scenario: PedScenario, schedule, allow_all_red: bool = False) -> PedTrace:
    """Roll every junction forward under ``schedule`` (shape ``(J, N)``)."""
    s = validate_schedule(schedule, scenario.n_junctions, allow_all_red)
    n = s.shape[1]
    if n > scenario.intervals:
        raise ValueError(f"schedule has {n} intervals but scenario only {scenario.intervals}")
    sl = slice(0, n)
    res = roll(scenario.initial_volume, scenario.arrivals[:, sl], scenario.alpha[:, sl],
               scenario.gamma[:, sl], s, scenario.history, scenario.capacities())
    return PedTrace(schedule=s, ratios=scenario.ratios()[:, sl], arrivals=scenario.arrivals[:, sl],
                    delta=scenario.delta, **res)


def delay_cost(trace: PedTrace) -> float:
    """Total pedestrian delay over the horizon, pedestrian-seconds."""
    units = int((trace.volumes[:, :-1, :] - trace.out).sum())
    return units * trace.delta


def delay_units(volumes, out) -> np.ndarray:
    """Delay in pedestrian-intervals, summed over the last two axes (time, corner)."""
    return (volumes[..., :-1, :] - out).sum(axis=(-2, -1))
