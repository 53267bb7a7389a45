"""One-way vehicle link model with consecutive-green speed categories.

Flows are vehicle counts per interval. Per interval, exit links discharge
first, then junctions are resolved from the bottom-right corner of the grid
back to the top-left so each downstream link's outflow is known before the
flow entering it is computed.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .ped_dynamics import ifloor
from .topology import ALL_RED, STAGES, STAGE_NAMES, GridNetwork, validate_schedule


class CapacityViolation(ValueError):
    pass


def speed_category(history, levels) -> float:
    """Speed level for a stream given its green bits over intervals k-r..k (oldest first).

    ``levels = (l0, ..., lr)`` is non-increasing; returns 0 when the stream is
    red at k, ``l0`` when all r+1 bits are green, else ``l^{r-q}`` for q+1
    trailing greens.
    """
    r = len(levels) - 1
    bits = list(history)[-(r + 1):]
    if len(bits) < r + 1:
        bits = [0] * (r + 1 - len(bits)) + bits
    if not bits[-1]:
        return 0.0
    trailing = 0
    for b in reversed(bits):
        if not b:
            break
        trailing += 1
    if trailing >= r + 1:
        return levels[0]
    return levels[r - (trailing - 1)]


def vehicle_flow(volume: int, turning: float, space: int, level: float, saturation: float) -> int:
    """Min-rule flow from a link towards one downstream link in one interval."""
    if level <= 0:
        return 0
    return max(0, min(ifloor(turning * volume), space, ifloor(level * saturation)))


def step_links(volumes, outflow, inflow, boundary_links, boundary_offer, max_volume):
    """Link conservation for one interval.

    ``outflow[l]`` is the count leaving link ``l``; ``inflow[l]`` the count entering
    from upstream junctions. Boundary offers are clipped to the remaining space.
    Returns ``(next_volumes, accepted, dropped)``.
    """
    volumes = np.asarray(volumes, dtype=np.int64)
    outflow = np.asarray(outflow, dtype=np.int64)
    inflow = np.asarray(inflow, dtype=np.int64).copy()
    max_volume = np.broadcast_to(np.asarray(max_volume, dtype=np.int64), volumes.shape)
    boundary_links = np.asarray(boundary_links, dtype=np.int64)
    offer = np.asarray(boundary_offer, dtype=np.int64)
    space = max_volume[boundary_links] - volumes[boundary_links] + outflow[boundary_links]
    accepted = np.minimum(offer, np.maximum(space, 0))
    inflow[boundary_links] += accepted
    nxt = volumes + inflow - outflow
    if (nxt > max_volume).any():
        bad = np.flatnonzero(nxt > max_volume).tolist()
        raise CapacityViolation(f"links {bad} exceed their maximal volume")
    if (nxt < 0).any():
        raise CapacityViolation("negative link volume")
    return nxt, accepted, offer - accepted


@dataclass
class VehScenario:
    network: GridNetwork
    initial_volume: np.ndarray  # (L,)
    boundary_inflow: np.ndarray  # (n_boundary, T) offered counts per interval
    max_volume: np.ndarray | int = 100
    levels: tuple = (0.3, 0.15)
    saturation: float = 100.0  # v* d* delta: vehicles per interval per unit level
    turning: np.ndarray | None = None  # (L,) share sent to the single downstream link
    history: np.ndarray | None = None  # (J, r) stages before interval 1, oldest first
    delta: float = 15.0

    def __post_init__(self):
        n_l = self.network.n_links
        n_j = self.network.n_junctions
        self.initial_volume = np.asarray(self.initial_volume, dtype=np.int64)
        self.boundary_inflow = np.asarray(self.boundary_inflow, dtype=np.int64)
        self.max_volume = np.broadcast_to(np.asarray(self.max_volume, dtype=np.int64), (n_l,)).copy()
        self.levels = tuple(float(x) for x in self.levels)
        if self.turning is None:
            self.turning = np.ones(n_l)
        self.turning = np.asarray(self.turning, dtype=float)
        if self.history is None:
            self.history = np.full((n_j, self.depth), ALL_RED, dtype=np.int64)
        self.history = np.asarray(self.history, dtype=np.int64).reshape(n_j, self.depth)

        if self.initial_volume.shape != (n_l,):
            raise ValueError(f"initial_volume must have one entry per link ({n_l})")
        if self.boundary_inflow.ndim != 2 or self.boundary_inflow.shape[0] != len(self.network.boundary_links):
            raise ValueError("boundary_inflow must have shape (boundary links, intervals)")
        if (self.initial_volume < 0).any() or (self.initial_volume > self.max_volume).any():
            raise ValueError("initial volumes must lie in [0, max_volume]")
        if (self.boundary_inflow < 0).any():
            raise ValueError("boundary inflows must be non-negative")
        if not self.levels or any(x <= 0 for x in self.levels):
            raise ValueError("speed levels must be strictly positive")
        if any(a < b for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("speed levels must be non-increasing")
        # each link has a single downstream stream, so its turning ratio must be 1
        if not np.allclose(self.turning, 1.0):
            raise ValueError("turning ratios over a link's downstream links must sum to 1")
        if self.saturation <= 0:
            raise ValueError("saturation count must be positive")

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    @property
    def intervals(self) -> int:
        return self.boundary_inflow.shape[1]

    @property
    def level_caps(self) -> np.ndarray:
        """Per-interval flow cap per speed level index, with a trailing 0 for red."""
        return np.array([ifloor(lv * self.saturation) for lv in self.levels] + [0], dtype=np.int64)

    def travel_ratio(self) -> np.ndarray:
        return np.array([lk.travel_ratio for lk in self.network.links])

    def window(self, start: int, steps: int, initial_volume=None, history=None) -> "VehScenario":
        idx = np.minimum(np.arange(start, start + steps), self.intervals - 1)
        return replace(
            self,
            initial_volume=self.initial_volume if initial_volume is None else initial_volume,
            boundary_inflow=self.boundary_inflow[:, idx],
            history=self.history if history is None else history,
        )


def _trailing(history: np.ndarray, stage: int, cap: int) -> np.ndarray:
    count = np.zeros(history.shape[0], dtype=np.int64)
    alive = np.ones(history.shape[0], dtype=bool)
    for col in range(history.shape[1] - 1, -1, -1):
        alive &= history[:, col] == stage
        count += alive
    return np.minimum(count, cap)


def roll_veh(scenario: VehScenario, stages: np.ndarray) -> dict:
    """Vectorised roll-out for ``stages`` of shape ``batch + (J, N)``."""
    net = scenario.network
    stages = np.asarray(stages, dtype=np.int64)
    batch = stages.shape[:-2]
    n = stages.shape[-1]
    n_l = net.n_links
    r = scenario.depth
    caps = scenario.level_caps
    top = caps[0]
    cmax = scenario.max_volume
    turning = scenario.turning
    exits = np.asarray(net.exit_links)
    bnd = np.asarray(net.boundary_links)
    order = net.reverse_topological_junctions()

    trail = np.zeros(batch + (net.n_junctions, 2), dtype=np.int64)
    for w in STAGES:
        trail[..., w] = _trailing(scenario.history, w, r + 1)

    vol = np.broadcast_to(scenario.initial_volume, batch + (n_l,)).copy()
    volumes = np.empty(batch + (n + 1, n_l), dtype=np.int64)
    out = np.empty(batch + (n, n_l), dtype=np.int64)
    level_idx = np.full(batch + (n, n_l), len(caps) - 1, dtype=np.int64)
    accepted = np.empty(batch + (n, len(bnd)), dtype=np.int64)
    dropped = np.empty_like(accepted)
    volumes[..., 0, :] = vol

    for k in range(n):
        s = np.zeros(batch + (n_l,), dtype=np.int64)
        inflow = np.zeros_like(s)
        s[..., exits] = np.minimum(vol[..., exits], top)
        level_idx[..., k, exits] = 0
        for w in STAGES:
            green = stages[..., :, k] == w
            trail[..., w] = np.where(green, np.minimum(trail[..., w] + 1, r + 1), 0)
        for j in order:
            st = stages[..., j, k]
            for w in STAGES:
                up = net.upstream_link[j, w]
                down = net.downstream_link[j, w]
                green = st == w
                idx = np.where(green, np.maximum(r + 1 - trail[..., j, w], 0), len(caps) - 1)
                space = cmax[down] - vol[..., down] + s[..., down]
                f = np.minimum(np.minimum(ifloor(turning[up] * vol[..., up]), space), caps[idx])
                f = np.where(green, np.maximum(f, 0), 0)
                s[..., up] = f
                inflow[..., down] = f
                level_idx[..., k, up] = idx
        space = cmax[bnd] - vol[..., bnd] + s[..., bnd]
        acc = np.minimum(scenario.boundary_inflow[:, min(k, scenario.intervals - 1)], np.maximum(space, 0))
        inflow[..., bnd] += acc
        accepted[..., k, :] = acc
        dropped[..., k, :] = scenario.boundary_inflow[:, min(k, scenario.intervals - 1)] - acc
        vol = vol + inflow - s
        out[..., k, :] = s
        volumes[..., k + 1, :] = vol

    level_values = np.array(list(scenario.levels) + [0.0])
    return {"volumes": volumes, "out": out, "levels": level_values[level_idx],
            "accepted": accepted, "dropped": dropped}


@dataclass
class VehTrace:
    schedule: np.ndarray  # (J, N)
    volumes: np.ndarray  # (N+1, L)
    out: np.ndarray  # (N, L)
    levels: np.ndarray  # (N, L) speed level used by each link's outflow
    accepted: np.ndarray  # (N, n_boundary)
    dropped: np.ndarray
    travel_ratio: np.ndarray  # (L,)
    delta: float
    link_names: list = field(default_factory=list)
    boundary_links: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return self.schedule.shape[1]

    @property
    def step_delay(self) -> np.ndarray:
        """Vehicle-seconds per interval and link."""
        return (self.volumes[:-1] - self.travel_ratio * self.out) * self.delta

    def csv_rows(self):
        rows = [["link", "interval", "volume", "flow_out", "level", "step_delay", "dropped"]]
        drop_by_link = {l: b for b, l in enumerate(self.boundary_links)}
        delay = self.step_delay
        for li, name in enumerate(self.link_names):
            for k in range(self.steps):
                b = drop_by_link.get(li)
                rows.append([name, k + 1, int(self.volumes[k, li]), int(self.out[k, li]),
                             repr(float(self.levels[k, li])), _num(delay[k, li]),
                             int(self.dropped[k, b]) if b is not None else 0])
        return rows


def _num(x):
    x = float(x)
    return int(x) if x.is_integer() else repr(x)


def simulate_veh(scenario: VehScenario, schedule, allow_all_red: bool = False) -> VehTrace:
    net = scenario.network
    s = validate_schedule(schedule, net.n_junctions, allow_all_red)
    res = roll_veh(scenario, s)
    return VehTrace(schedule=s, travel_ratio=scenario.travel_ratio(), delta=scenario.delta,
                    link_names=[lk.name for lk in net.links],
                    boundary_links=list(net.boundary_links), **res)


def delay_units(volumes, out, travel_ratio) -> np.ndarray:
    """Vehicle delay in vehicle-intervals, summed over the last two axes."""
    return (volumes[..., :-1, :] - travel_ratio * out).sum(axis=(-2, -1))


def vehicle_delay(trace: VehTrace) -> float:
    return float(delay_units(trace.volumes, trace.out, trace.travel_ratio)) * trace.delta


def stage_label(stage: int) -> str:
    return STAGE_NAMES[int(stage)]
