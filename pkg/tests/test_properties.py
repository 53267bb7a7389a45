"""Randomised invariants of both simulators."""
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from mixedflow.ped_dynamics import PedScenario, roll
from mixedflow.topology import ALL_RED, PARTNER, GridSpec, build_grid
from mixedflow.veh_dynamics import VehScenario, roll_veh

CAPS = (23, 74)


def ped_step_violations(vol, arrivals, alpha, gamma, stage, prev):
    res = roll(vol, arrivals[None], alpha[None], gamma[None], np.array([stage]), prev, CAPS)
    out, inflow, dep = res["out"][0], res["inflow"][0], res["departures"][0]
    nxt = res["volumes"][1]
    cap = CAPS[1] if prev == stage else CAPS[0]
    bad = []
    if (nxt != vol + arrivals + inflow - out - dep).any():
        bad.append("conservation")
    if (out > cap).any() or (out > vol).any():
        bad.append("capacity")
    if (nxt < 0).any() or (out < 0).any() or (dep < 0).any():
        bad.append("negative")
    if stage == ALL_RED and out.any():
        bad.append("red-flow")
    if stage != ALL_RED and (inflow != out[PARTNER[stage]]).any():
        bad.append("hop")
    if (dep > inflow).any():
        bad.append("departures")
    return bad


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(vol=st.lists(st.integers(0, 500), min_size=4, max_size=4),
       arrivals=st.lists(st.integers(0, 50), min_size=4, max_size=4),
       alpha=st.lists(st.floats(0, 1), min_size=4, max_size=4),
       gamma=st.lists(st.floats(0, 1), min_size=4, max_size=4),
       stage=st.sampled_from([0, 1, ALL_RED]), prev=st.sampled_from([0, 1, ALL_RED]))
def test_pedestrian_step_invariants(vol, arrivals, alpha, gamma, stage, prev):
    assert ped_step_violations(np.array(vol), np.array(arrivals), np.array(alpha), np.array(gamma),
                               stage, prev) == []


NET = build_grid(GridSpec(2, 2, 15.0, 1))


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(vol=st.lists(st.integers(0, 100), min_size=NET.n_links, max_size=NET.n_links),
       inflow=st.lists(st.integers(0, 60), min_size=4, max_size=4),
       stages=st.lists(st.sampled_from([0, 1, ALL_RED]), min_size=4, max_size=4),
       history=st.lists(st.sampled_from([0, 1, ALL_RED]), min_size=4, max_size=4))
def test_vehicle_step_invariants(vol, inflow, stages, history):
    sc = VehScenario(NET, np.array(vol), np.array(inflow)[:, None], history=np.array(history)[:, None])
    res = roll_veh(sc, np.array(stages)[:, None])
    v0, v1, out = res["volumes"][0], res["volumes"][1], res["out"][0]
    acc, drop = res["accepted"][0], res["dropped"][0]
    received = np.zeros(NET.n_links, dtype=np.int64)
    for j in range(NET.n_junctions):
        for w in (0, 1):
            received[NET.downstream_link[j, w]] += out[NET.upstream_link[j, w]]
    received[NET.boundary_links] += acc
    assert (v1 == v0 + received - out).all()  # conservation
    assert (acc + drop == np.array(inflow)).all()
    assert (v1 <= 100).all() and (v1 >= 0).all() and (out >= 0).all()
    assert (out <= v0).all() and (out <= 30).all()  # top speed level caps the count
    for j in range(NET.n_junctions):
        for w in (0, 1):
            if stages[j] != w:
                assert out[NET.upstream_link[j, w]] == 0  # red streams carry nothing


@settings(max_examples=50, deadline=None, derandomize=True)
@given(seed=st.integers(0, 10 ** 6), steps=st.integers(1, 8))
def test_multi_step_pedestrian_conservation(seed, steps):
    rng = np.random.default_rng(seed)
    sc = PedScenario(rng.integers(0, 100, (3, 4)), rng.integers(0, 20, (3, steps, 4)),
                     rng.uniform(0, 1, (3, steps, 4)), rng.uniform(0, 1, (3, steps, 4)))
    stages = rng.integers(0, 2, (3, steps))
    res = roll(sc.initial_volume, sc.arrivals, sc.alpha, sc.gamma, stages, sc.history, CAPS)
    total = sc.initial_volume.sum(1) + sc.arrivals.sum((1, 2)) - res["departures"].sum((1, 2))
    assert (res["volumes"][:, -1].sum(1) == total).all()
