from fractions import Fraction

import numpy as np
import pytest

from mixedflow.dhs_solver import DhsParams
from mixedflow.exact_solver import SolverGuard
from mixedflow.integration import (WeightedProblem, as_weight, costs_at, joint_feasible, pure_optima,
                                   saturation_weight, scaled_cost, scaled_cost_values, schedule_hash,
                                   solve_weighted, sweep_weights, switching_frequency_profile,
                                   switching_frequency_turning)
from mixedflow.ped_dynamics import delay_cost, simulate
from mixedflow.scenario import gen_scenario
from mixedflow.topology import ALL_RED, HORIZONTAL, VERTICAL, StageCoupling
from mixedflow.veh_dynamics import simulate_veh, vehicle_delay


def _problem(n_v=1, n_h=1, steps=3, seed=0, weight=0, mode="exclusive"):
    sf = gen_scenario(n_v, n_h, steps=steps, seed=seed, coupling_mode=mode)
    return WeightedProblem(sf.ped_scenario(), sf.veh_scenario(), sf.coupling.build(), weight, steps)


def test_scaled_cost_arithmetic():
    u, p, v = scaled_cost_values(50, 25, 100, 100, 2)
    assert (u, p, v) == (1.25, 0.5, 0.25)
    u, _, v = scaled_cost_values(10, 30, 40, 60, 0)
    assert u == v
    with pytest.raises(ValueError):
        scaled_cost_values(1, 1, 0, 1, 1)


def test_weight_parsing():
    assert as_weight("3/4") == Fraction(3, 4)
    assert as_weight(0.5) == Fraction(1, 2)
    with pytest.raises(ValueError):
        as_weight(-1)


def test_worst_vehicle_schedule_has_unit_ratio():
    prob = _problem(seed=2)
    worst = int(np.argmax(prob.tables.veh_units))
    assert costs_at(prob, worst).v_ratio == 1


def test_joint_feasibility():
    c = StageCoupling()
    assert joint_feasible([[HORIZONTAL]], [[HORIZONTAL]], c)
    assert not joint_feasible([[HORIZONTAL]], [[VERTICAL]], c)
    assert joint_feasible([[ALL_RED]], [[ALL_RED]], StageCoupling(mode="relaxed"))
    assert not joint_feasible([[ALL_RED]], [[ALL_RED]], c)
    with pytest.raises(ValueError):
        joint_feasible([[0, 0]], [[0]], c)


@pytest.mark.parametrize("m", [0, Fraction(1, 2), 3, 40])
def test_one_junction_matches_brute_force(m):
    prob = _problem(steps=3, seed=4, weight=m)
    sol = solve_weighted(prob)
    best = None
    for code in range(8):
        s = np.array([[(code >> (2 - k)) & 1 for k in range(3)]])
        p = delay_cost(simulate(prob.ped, s))
        v = vehicle_delay(simulate_veh(prob.veh.window(0, 3), s))
        u = Fraction(int(v), int(prob.v_max)) + as_weight(m) * Fraction(int(p), int(prob.p_max))
        if best is None or u < best[0]:
            best = (u, s)
    assert sol.costs.u == best[0]
    assert sol.joint.tolist() == best[1].tolist()
    assert joint_feasible(sol.ped_schedule, sol.veh_schedule, prob.coupling)


def test_zero_weight_is_pure_vehicle_optimum():
    prob = _problem(1, 2, steps=4, seed=1)
    sol = solve_weighted(prob)
    pure = pure_optima(prob)
    assert sol.costs.veh_delay == pure["veh_delay"]
    assert sol.veh_schedule.tolist() == pure["veh_schedule"].tolist()


def test_large_weight_is_pure_pedestrian_optimum():
    prob = _problem(1, 2, steps=4, seed=1)
    m_sat, idx = saturation_weight(prob)
    pure = pure_optima(prob)
    for m in (m_sat + 1, m_sat * 2 + 5, 10 ** 6):
        sol = solve_weighted(prob.with_weight(m))
        assert sol.index == idx
        assert sol.costs.ped_delay == pure["ped_delay"]


def test_relaxed_mode_has_three_modes():
    prob = _problem(steps=3, seed=0, mode="relaxed")
    assert prob.tables.n_modes == 3 and len(prob.tables.veh_units) == 27
    sol = solve_weighted(prob.with_weight(1))
    assert joint_feasible(sol.ped_schedule, sol.veh_schedule, prob.coupling)


def test_exact_integration_guard():
    sf = gen_scenario(2, 2, steps=6, seed=0)
    with pytest.raises(SolverGuard):
        WeightedProblem(sf.ped_scenario(), sf.veh_scenario(), sf.coupling.build(), 1, 6)


def test_dhs_weighted_close_to_exact():
    prob = _problem(1, 2, steps=3, seed=3, weight=2)
    exact = solve_weighted(prob)
    heur = solve_weighted(prob, "dhs", DhsParams(hms=100, ni=300), seed=1)
    assert heur.costs.u >= exact.costs.u
    assert scaled_cost(heur.joint, prob).u == heur.costs.u
    with pytest.raises(ValueError):
        solve_weighted(prob, "gurobi")


def test_switching_frequency_profile():
    assert switching_frequency_profile(np.zeros((3, 4))) == 0
    assert switching_frequency_profile(np.tile([0, 1, 0, 1], (3, 1))) == 1
    s = np.zeros((9, 3), dtype=int)
    s[:3, 1] = 1  # three junctions flip into interval 2 and back
    s[3:6, 2] = 1
    s[:3, 2] = 1
    assert switching_frequency_profile(s) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        switching_frequency_profile(np.zeros((2, 1)))


def test_switching_frequency_turning():
    a = np.zeros((2, 3))
    assert switching_frequency_turning(a, a) == 0
    assert switching_frequency_turning(a, a + 1) == 1
    with pytest.raises(ValueError):
        switching_frequency_turning(a, np.zeros((3, 2)))


def test_sweep_step_structure():
    prob = _problem(2, 2, steps=3, seed=0)
    result = sweep_weights(prob, [Fraction(i, 2) for i in range(0, 41)], refine=True)
    p = [pt.costs.p_ratio for pt in result.points]
    v = [pt.costs.v_ratio for pt in result.points]
    assert all(a <= b for a, b in zip(v, v[1:]))
    assert all(a >= b for a, b in zip(p, p[1:]))
    for a, b in zip(result.points, result.points[1:]):
        if not b.turning:
            assert (a.costs.p_ratio, a.costs.v_ratio) == (b.costs.p_ratio, b.costs.v_ratio)
        else:
            assert b.sf_turning == switching_frequency_turning(a.veh_schedule, b.veh_schedule) > 0
    rows = result.rows()
    assert rows[0][:4] == ["weight", "U_D", "P_D_ratio", "V_D_ratio"]
    assert len(rows) == len(result.points) + 1


def test_sweep_without_turning_weights():
    # seed 10 at two intervals: the vehicle optimum is also the pedestrian optimum
    prob = _problem(steps=2, seed=10)
    assert saturation_weight(prob)[0] == 0
    result = sweep_weights(prob, range(0, 65), refine=True)
    assert result.turning_weights == []
    assert len({pt.index for pt in result.points}) == 1


def test_sweep_rejects_bad_grid():
    prob = _problem(steps=2, seed=0)
    with pytest.raises(ValueError):
        sweep_weights(prob, [1, 2])
    with pytest.raises(ValueError):
        sweep_weights(prob, [0, 2, 1])


def test_schedule_hash_stable():
    assert schedule_hash(np.zeros((2, 2))) == schedule_hash(np.zeros((2, 2), dtype=int))
    assert schedule_hash(np.zeros((2, 2))) != schedule_hash(np.zeros((1, 4)))
