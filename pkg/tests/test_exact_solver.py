import numpy as np
import pytest

from helpers import single_junction
from mixedflow.exact_solver import (ENUM_NODE_CAP, PedStepModel, SolverGuard, VehStepModel, branch_and_bound,
                                    enumerate_joint, joint_space, maximize_cost, maximize_vehicle_cost,
                                    schedule_space, solve_exact_junction, solve_exact_network,
                                    solve_exact_vehicle)
from mixedflow.ped_dynamics import delay_cost, simulate
from mixedflow.scenario import gen_scenario
from mixedflow.unhappiness import unhappiness_cost


def _brute(sc, n, objective="delay"):
    costs = []
    for code in range(2 ** n):
        s = [[(code >> (n - 1 - k)) & 1 for k in range(n)]]
        tr = simulate(sc, s)
        costs.append(delay_cost(tr) if objective == "delay" else unhappiness_cost(tr))
    return costs


def test_schedule_space_lexicographic():
    assert schedule_space(2, 3).tolist() == [[0, 0, 0], [0, 0, 1], [0, 1, 0], [0, 1, 1],
                                             [1, 0, 0], [1, 0, 1], [1, 1, 0], [1, 1, 1]]
    assert joint_space(2, 2, 2, 1, 2)[0].tolist() == [[0, 0], [0, 1]]


def test_zero_demand_prefers_all_horizontal():
    sc = single_junction([0, 0, 0, 0], steps=4)
    for method in ("enumerate", "bnb"):
        res = solve_exact_junction(sc, 0, "delay", method=method)
        assert res.cost == 0 and res.schedule.tolist() == [[0, 0, 0, 0]]


def test_vertical_only_demand():
    # alpha = 0: everybody wants a vertical crossing; 10 per corner fits the first-green capacity
    sc = single_junction([10, 10, 10, 10], alpha=0.0, steps=3)
    res = solve_exact_junction(sc, 0, "delay")
    assert res.schedule.tolist() == [[1, 1, 1]]
    costs = _brute(sc, 3)
    assert res.cost == min(costs)


@pytest.mark.parametrize("objective", ["delay", "unhappiness"])
def test_enumeration_and_bnb_agree_with_brute_force(objective):
    for seed in range(6):
        sc = gen_scenario(1, 1, steps=5, seed=seed).ped_scenario()
        costs = _brute(sc, 5, objective)
        enum = solve_exact_junction(sc, 0, objective, method="enumerate")
        bnb = solve_exact_junction(sc, 0, objective, method="bnb")
        assert enum.cost == bnb.cost
        assert enum.schedule.tolist() == bnb.schedule.tolist()
        assert enum.cost == pytest.approx(min(costs), rel=1e-12)
        assert int("".join(map(str, enum.schedule[0])), 2) == int(np.argmin(costs))


def test_pruning_is_sound():
    sc = gen_scenario(1, 1, steps=6, seed=11).ped_scenario()
    model = PedStepModel(sc, "delay", 6)
    pruned = branch_and_bound(model, 1, 6, 2, prune=True)
    full = branch_and_bound(model, 1, 6, 2, prune=False)
    assert pruned.cost == full.cost and pruned.nodes <= full.nodes


def test_network_is_sum_of_junctions():
    sc = gen_scenario(3, 3, steps=5, seed=0).ped_scenario()
    net = solve_exact_network(sc, "delay", 5)
    parts = [solve_exact_junction(sc, j, "delay", 5) for j in range(9)]
    assert net.cost == sum(p.cost for p in parts)
    assert net.schedule.tolist() == [p.schedule[0].tolist() for p in parts]


@pytest.mark.parametrize("objective", ["delay", "unhappiness"])
def test_decomposed_equals_joint_on_two_junctions(objective):
    sc = gen_scenario(1, 2, steps=4, seed=5).ped_scenario()
    dec = solve_exact_network(sc, objective, 4)
    model = PedStepModel(sc, objective, 4)
    schedule, cost, _ = enumerate_joint(model.batch, 2, 4, 2)
    assert dec.cost == pytest.approx(float(cost), rel=1e-12)
    assert dec.schedule.tolist() == schedule.tolist()


def test_identical_junctions_identical_schedules():
    one = gen_scenario(1, 1, steps=4, seed=3).ped_scenario()
    from mixedflow.ped_dynamics import PedScenario
    two = PedScenario(np.repeat(one.initial_volume, 3, 0), np.repeat(one.arrivals, 3, 0),
                      np.repeat(one.alpha, 3, 0), np.repeat(one.gamma, 3, 0))
    res = solve_exact_network(two, "delay", 4)
    assert (res.schedule == res.schedule[0]).all()


def test_network_rejects_weighted():
    sc = gen_scenario(1, 1, steps=2, seed=0).ped_scenario()
    with pytest.raises(ValueError):
        solve_exact_network(sc, "weighted", 2)


def test_maximize_cost():
    assert maximize_cost(single_junction([0, 0, 0, 0], steps=3), "delay", 3) == 0
    for seed in range(3):
        sc = gen_scenario(1, 1, steps=3, seed=seed).ped_scenario()
        assert maximize_cost(sc, "delay", 3) == max(_brute(sc, 3))
        assert maximize_cost(sc, "delay", 3) >= solve_exact_network(sc, "delay", 3).cost


def test_guards():
    sc = gen_scenario(1, 1, steps=2, seed=0).ped_scenario()
    with pytest.raises(SolverGuard):
        enumerate_joint(lambda j: np.zeros(len(j)), 3, 7, 2)
    assert 2 ** 20 == ENUM_NODE_CAP
    with pytest.raises(ValueError):
        solve_exact_junction(sc, 0, "delay", method="simplex")


def test_vehicle_bnb_matches_enumeration():
    veh = gen_scenario(1, 2, steps=4, seed=2).veh_scenario()
    enum = solve_exact_vehicle(veh, 4)
    bnb = branch_and_bound(VehStepModel(veh, 4), 2, 4, 2)
    assert enum.method == "enumerate"
    assert enum.cost == pytest.approx(bnb.cost)
    assert enum.schedule.tolist() == bnb.schedule.tolist()
    assert maximize_vehicle_cost(veh, 4) >= enum.cost


def test_budget_exhaustion_is_flagged():
    veh = gen_scenario(1, 2, steps=4, seed=2).veh_scenario()
    res = branch_and_bound(VehStepModel(veh, 4), 2, 4, 2, budget=20)
    assert not res.certified
