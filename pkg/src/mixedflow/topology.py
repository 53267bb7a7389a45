"""Grid networks: junction corners, crosswalk streams, one-way vehicle links.

Stages are encoded as small integers everywhere in the package::

    HORIZONTAL = 0, VERTICAL = 1, ALL_RED = -1

A schedule is an integer array of shape ``(n_junctions, steps)`` holding one
stage (or joint mode) per junction and interval. Corners are indexed 0..3,
i.e. the anticlockwise corners 1..4 shifted down by one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

HORIZONTAL = 0
VERTICAL = 1
ALL_RED = -1
STAGES = (HORIZONTAL, VERTICAL)
STAGE_NAMES = {HORIZONTAL: "H", VERTICAL: "V", ALL_RED: "R"}

N_CORNERS = 4


def horizontal_partner(i: int) -> int:
    """Corner reached by a horizontal crossing from corner ``i`` (0-based)."""
    # 1-based rule: i+1 for i in {1,3}, i-1 for i in {2,4}
    return i + 1 if i % 2 == 0 else i - 1


def vertical_partner(i: int) -> int:
    jh = horizontal_partner(i)
    return jh + 2 if i < 2 else jh - 2


H_PARTNER = np.array([horizontal_partner(i) for i in range(N_CORNERS)])
V_PARTNER = np.array([vertical_partner(i) for i in range(N_CORNERS)])
# PARTNER[stage, corner] -> destination corner
PARTNER = np.stack([H_PARTNER, V_PARTNER])


@dataclass(frozen=True)
class GridSpec:
    n_h: int
    n_v: int
    delta: float = 15.0
    steps: int = 2

    def __post_init__(self):
        if self.n_h < 1 or self.n_v < 1:
            raise ValueError(f"grid must have at least one junction, got {self.n_v}x{self.n_h}")
        if not self.delta > 0:
            raise ValueError(f"sampling interval must be positive, got {self.delta}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")

    @property
    def horizon(self) -> float:
        return self.steps * self.delta

    @property
    def n_junctions(self) -> int:
        return self.n_h * self.n_v


@dataclass(frozen=True)
class JunctionTopology:
    """Corner geometry shared by every junction."""

    corners: tuple = (0, 1, 2, 3)
    stages: tuple = STAGES

    def partner(self, stage: int, corner: int) -> int:
        return int(PARTNER[stage, corner])

    def streams(self, stage: int) -> frozenset:
        return frozenset((i, int(PARTNER[stage, i])) for i in self.corners)

    @property
    def ped_streams(self) -> dict:
        return {o: self.streams(o) for o in self.stages}


@dataclass(frozen=True)
class Link:
    name: str
    index: int
    orientation: int  # HORIZONTAL or VERTICAL
    upstream: int | None  # junction feeding this link, None at the boundary
    downstream: int | None  # junction this link enters, None for exits
    travel_ratio: float = 1.0  # L_i / v_max in intervals


@dataclass(frozen=True)
class StageCoupling:
    """Joint pedestrian+vehicle modes allowed at one junction.

    ``modes[m] = (ped_stage, veh_stage)``. In ``relaxed`` mode an all-red
    joint mode is additionally admitted.
    """

    modes: tuple = ((HORIZONTAL, HORIZONTAL), (VERTICAL, VERTICAL))
    mode: str = "exclusive"

    def __post_init__(self):
        if self.mode not in ("exclusive", "relaxed"):
            raise ValueError(f"coupling mode must be 'exclusive' or 'relaxed', got {self.mode!r}")
        seen = set()
        for ped, veh in self.modes:
            if ped not in (*STAGES, ALL_RED) or veh not in (*STAGES, ALL_RED):
                raise ValueError(f"invalid joint mode {(ped, veh)!r}")
            if (ped, veh) in seen:
                raise ValueError(f"duplicate joint mode {(ped, veh)!r}")
            seen.add((ped, veh))

    @property
    def joint_modes(self) -> tuple:
        if self.mode == "relaxed" and (ALL_RED, ALL_RED) not in self.modes:
            return tuple(self.modes) + ((ALL_RED, ALL_RED),)
        return tuple(self.modes)

    @property
    def ped_map(self) -> np.ndarray:
        return np.array([p for p, _ in self.joint_modes], dtype=np.int64)

    @property
    def veh_map(self) -> np.ndarray:
        return np.array([v for _, v in self.joint_modes], dtype=np.int64)

    def split(self, joint: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map a joint-mode schedule to (pedestrian, vehicle) stage schedules."""
        joint = np.asarray(joint, dtype=np.int64)
        if joint.size and (joint.min() < 0 or joint.max() >= len(self.joint_modes)):
            raise ValueError("joint schedule references an undefined mode")
        return self.ped_map[joint], self.veh_map[joint]

    def to_dict(self) -> dict:
        return {"mode": self.mode, "modes": [list(m) for m in self.modes]}

    @classmethod
    def from_dict(cls, d: dict) -> "StageCoupling":
        return cls(modes=tuple(tuple(m) for m in d["modes"]), mode=d.get("mode", "exclusive"))


@dataclass
class GridNetwork:
    """Junctions of an ``n_v x n_h`` grid with one-way vehicle links.

    Junction ``(r, c)`` has flat index ``r * n_h + c``. Horizontal traffic
    moves left to right, vertical traffic top to bottom; each junction has one
    incoming and one outgoing link per orientation.
    """

    spec: GridSpec
    junction: JunctionTopology
    links: list
    upstream_link: np.ndarray  # (n_junctions, 2) link entering junction per stage
    downstream_link: np.ndarray  # (n_junctions, 2) link leaving junction per stage
    boundary_links: list
    exit_links: list
    _by_name: dict = field(default_factory=dict, repr=False)

    @property
    def n_junctions(self) -> int:
        return self.spec.n_junctions

    @property
    def n_links(self) -> int:
        return len(self.links)

    def position(self, j: int) -> tuple[int, int]:
        return divmod(j, self.spec.n_h)

    def link(self, name: str) -> Link:
        return self._by_name[name]

    def veh_streams(self, j: int) -> dict:
        return {
            w: frozenset({(int(self.upstream_link[j, w]), int(self.downstream_link[j, w]))})
            for w in STAGES
        }

    def reverse_topological_junctions(self) -> list:
        """Junctions ordered so every downstream junction precedes its upstream ones."""
        return sorted(range(self.n_junctions), key=lambda j: (-sum(self.position(j)), j))

    def link_edges(self) -> Iterator[tuple[int, int]]:
        for j in range(self.n_junctions):
            for w in STAGES:
                yield int(self.upstream_link[j, w]), int(self.downstream_link[j, w])

    def to_dict(self) -> dict:
        return {
            "grid": {"n_h": self.spec.n_h, "n_v": self.spec.n_v,
                     "delta": self.spec.delta, "steps": self.spec.steps},
            "junctions": [
                {"index": j, "row": self.position(j)[0], "col": self.position(j)[1],
                 "ped_streams": {STAGE_NAMES[o]: sorted(map(list, s))
                                 for o, s in self.junction.ped_streams.items()},
                 "veh_streams": {STAGE_NAMES[w]: [self.links[int(self.upstream_link[j, w])].name,
                                                  self.links[int(self.downstream_link[j, w])].name]
                                 for w in STAGES}}
                for j in range(self.n_junctions)
            ],
            "links": [
                {"name": lk.name, "index": lk.index, "orientation": STAGE_NAMES[lk.orientation],
                 "upstream": lk.upstream, "downstream": lk.downstream,
                 "travel_ratio": lk.travel_ratio}
                for lk in self.links
            ],
            "boundary_links": [self.links[i].name for i in self.boundary_links],
            "exit_links": [self.links[i].name for i in self.exit_links],
        }


def build_grid(spec: GridSpec) -> GridNetwork:
    n_h, n_v = spec.n_h, spec.n_v
    links: list[Link] = []
    h_index: dict[tuple[int, int], int] = {}
    v_index: dict[tuple[int, int], int] = {}

    # h(r, c) enters junction (r, c); h(r, n_h) is the exit of row r
    for r in range(n_v):
        for c in range(n_h + 1):
            up = r * n_h + c - 1 if c > 0 else None
            down = r * n_h + c if c < n_h else None
            h_index[r, c] = len(links)
            links.append(Link(f"h{r}_{c}", len(links), HORIZONTAL, up, down))
    for c in range(n_h):
        for r in range(n_v + 1):
            up = (r - 1) * n_h + c if r > 0 else None
            down = r * n_h + c if r < n_v else None
            v_index[r, c] = len(links)
            links.append(Link(f"v{r}_{c}", len(links), VERTICAL, up, down))

    n_j = n_h * n_v
    upstream = np.zeros((n_j, 2), dtype=np.int64)
    downstream = np.zeros((n_j, 2), dtype=np.int64)
    for r in range(n_v):
        for c in range(n_h):
            j = r * n_h + c
            upstream[j, HORIZONTAL] = h_index[r, c]
            downstream[j, HORIZONTAL] = h_index[r, c + 1]
            upstream[j, VERTICAL] = v_index[r, c]
            downstream[j, VERTICAL] = v_index[r + 1, c]

    boundary = [lk.index for lk in links if lk.upstream is None]
    exits = [lk.index for lk in links if lk.downstream is None]
    return GridNetwork(
        spec=spec,
        junction=JunctionTopology(),
        links=links,
        upstream_link=upstream,
        downstream_link=downstream,
        boundary_links=boundary,
        exit_links=exits,
        _by_name={lk.name: lk for lk in links},
    )


def validate_schedule(schedule, n_junctions: int, allow_all_red: bool = False) -> np.ndarray:
    """Return ``schedule`` as an int array, rejecting anything violating the stage rule."""
    s = np.asarray(schedule, dtype=np.int64)
    if s.ndim != 2 or s.shape[0] != n_junctions:
        raise ValueError(f"schedule must have shape ({n_junctions}, steps), got {s.shape}")
    allowed = (HORIZONTAL, VERTICAL, ALL_RED) if allow_all_red else STAGES
    if not np.isin(s, allowed).all():
        raise ValueError("schedule must select exactly one stage per junction and interval")
    return s
