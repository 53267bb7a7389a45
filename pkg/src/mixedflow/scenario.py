"""Scenario files: a JSON document holding grid, model parameters and demand.

Demand arrays are stored explicitly so a scenario file fully determines every
simulation; the generator block only records how they were drawn.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .ped_dynamics import CrosswalkGeometry, PedScenario
from .topology import ALL_RED, GridSpec, StageCoupling, build_grid
from .veh_dynamics import VehScenario

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridBlock(_Strict):
    n_h: int = Field(ge=1)
    n_v: int = Field(ge=1)
    delta: float = Field(default=15.0, gt=0)
    steps: int = Field(default=2, ge=1)


class PedestrianBlock(_Strict):
    length: float = Field(default=8.5, gt=0)
    width: float = Field(default=4.0, gt=0)
    walk_speed: float = Field(default=1.2, gt=0)
    startup: float = Field(default=3.2, gt=0)


class VehicleBlock(_Strict):
    max_volume: int = Field(default=100, ge=1)
    levels: list[float] = Field(default_factory=lambda: [0.3, 0.15])
    saturation: float = Field(default=100.0, gt=0)
    turning: float = 1.0

    @field_validator("levels")
    @classmethod
    def _levels(cls, v):
        if not v or any(x <= 0 for x in v) or any(a < b for a, b in zip(v, v[1:])):
            raise ValueError("speed levels must be positive and non-increasing")
        return v


class CouplingBlock(_Strict):
    mode: str = "exclusive"
    modes: list[list[int]] = Field(default_factory=lambda: [[0, 0], [1, 1]])

    def build(self) -> StageCoupling:
        return StageCoupling(modes=tuple(tuple(m) for m in self.modes), mode=self.mode)


class Range(_Strict):
    lo: float
    hi: float

    @model_validator(mode="after")
    def _ordered(self):
        if self.lo > self.hi:
            raise ValueError(f"range lower bound {self.lo} exceeds upper bound {self.hi}")
        return self


class GeneratorBlock(_Strict):
    seed: int = 0
    intervals: int = Field(default=2, ge=1)
    ped_initial: Range = Range(lo=0, hi=40)
    arrivals: Range = Range(lo=0, hi=10)  # pedestrians per interval
    alpha: Range = Range(lo=0, hi=1)
    gamma: Range = Range(lo=0, hi=0.5)
    veh_initial: Range = Range(lo=0, hi=50)
    boundary_inflow: Range = Range(lo=0, hi=20)  # vehicles per interval

    @model_validator(mode="after")
    def _bounds(self):
        for name in ("ped_initial", "arrivals", "veh_initial", "boundary_inflow"):
            if getattr(self, name).lo < 0:
                raise ValueError(f"{name} range must be non-negative")
        for name in ("alpha", "gamma"):
            r = getattr(self, name)
            if r.lo < 0 or r.hi > 1:
                raise ValueError(f"{name} range must lie within [0, 1]")
        return self


class DemandBlock(_Strict):
    ped_initial: list[list[int]]  # (J, 4)
    arrivals: list[list[list[int]]]  # (J, T, 4)
    alpha: list[list[list[float]]]
    gamma: list[list[list[float]]]
    ped_history: list[int]  # (J,)
    veh_initial: list[int]  # (L,)
    boundary_inflow: list[list[int]]  # (boundary links, T)
    veh_history: list[list[int]]  # (J, depth)


class ScenarioFile(_Strict):
    version: int = SCHEMA_VERSION
    grid: GridBlock
    pedestrian: PedestrianBlock = PedestrianBlock()
    vehicle: VehicleBlock = VehicleBlock()
    coupling: CouplingBlock = CouplingBlock()
    generator: GeneratorBlock = GeneratorBlock()
    demand: DemandBlock

    @model_validator(mode="after")
    def _consistent(self):
        if self.version != SCHEMA_VERSION:
            raise ValueError(f"unsupported scenario version {self.version}")
        # building both models runs every shape and range check
        self.ped_scenario()
        self.veh_scenario()
        self.coupling.build()
        return self

    def grid_spec(self) -> GridSpec:
        g = self.grid
        return GridSpec(g.n_h, g.n_v, g.delta, g.steps)

    def ped_scenario(self) -> PedScenario:
        d = self.demand
        return PedScenario(
            initial_volume=np.array(d.ped_initial, dtype=np.int64).reshape(-1, 4),
            arrivals=np.array(d.arrivals, dtype=np.int64),
            alpha=np.array(d.alpha, dtype=float),
            gamma=np.array(d.gamma, dtype=float),
            geometry=CrosswalkGeometry(**self.pedestrian.model_dump()),
            delta=self.grid.delta,
            history=np.array(d.ped_history, dtype=np.int64),
        )

    def veh_scenario(self) -> VehScenario:
        d = self.demand
        net = build_grid(self.grid_spec())
        depth = len(self.vehicle.levels) - 1
        return VehScenario(
            network=net,
            initial_volume=np.array(d.veh_initial, dtype=np.int64),
            boundary_inflow=np.array(d.boundary_inflow, dtype=np.int64).reshape(len(net.boundary_links), -1),
            max_volume=self.vehicle.max_volume,
            levels=tuple(self.vehicle.levels),
            saturation=self.vehicle.saturation,
            turning=np.full(net.n_links, self.vehicle.turning),
            history=np.array(d.veh_history, dtype=np.int64).reshape(net.n_junctions, depth),
            delta=self.grid.delta,
        )

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":")) + "\n"


def _ints(rng, r: Range, shape) -> np.ndarray:
    return rng.integers(int(np.ceil(r.lo)), int(np.floor(r.hi)) + 1, size=shape)


def _ratios(rng, r: Range, shape) -> np.ndarray:
    return np.round(rng.uniform(r.lo, r.hi, size=shape), 4)


def gen_scenario(n_v: int, n_h: int, steps: int = 2, seed: int = 0, intervals: int | None = None,
                 delta: float = 15.0, coupling_mode: str = "exclusive", **ranges) -> ScenarioFile:
    """Seeded random demand for an ``n_v x n_h`` grid.

    ``ranges`` overrides generator ranges, e.g. ``arrivals=(0, 5)``.
    """
    gen = GeneratorBlock(seed=seed, intervals=intervals or steps,
                         **{k: Range(lo=v[0], hi=v[1]) for k, v in ranges.items()})
    spec = GridSpec(n_h, n_v, delta, steps)
    net = build_grid(spec)
    vehicle = VehicleBlock()
    j, t = spec.n_junctions, gen.intervals
    rng = np.random.default_rng(seed)
    demand = DemandBlock(
        ped_initial=_ints(rng, gen.ped_initial, (j, 4)).tolist(),
        arrivals=_ints(rng, gen.arrivals, (j, t, 4)).tolist(),
        alpha=_ratios(rng, gen.alpha, (j, t, 4)).tolist(),
        gamma=_ratios(rng, gen.gamma, (j, t, 4)).tolist(),
        ped_history=[ALL_RED] * j,
        veh_initial=np.minimum(_ints(rng, gen.veh_initial, net.n_links), vehicle.max_volume).tolist(),
        boundary_inflow=_ints(rng, gen.boundary_inflow, (len(net.boundary_links), t)).tolist(),
        veh_history=[[ALL_RED] * (len(vehicle.levels) - 1) for _ in range(j)],
    )
    return ScenarioFile(grid=GridBlock(n_h=n_h, n_v=n_v, delta=delta, steps=steps), vehicle=vehicle,
                        coupling=CouplingBlock(mode=coupling_mode), generator=gen, demand=demand)


def load_scenario(path) -> ScenarioFile:
    path = Path(path)
    try:
        raw = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read scenario {path}: {exc}") from exc
    return ScenarioFile.model_validate_json(raw)


def save_scenario(scenario: ScenarioFile, path) -> Path:
    path = Path(path)
    path.write_text(scenario.to_json())
    return path
