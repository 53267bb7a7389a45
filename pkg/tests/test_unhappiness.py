import math

import numpy as np
import pytest

from helpers import single_junction
from mixedflow.exact_solver import ped_costs
from mixedflow.ped_dynamics import simulate
from mixedflow.scenario import gen_scenario
from mixedflow.unhappiness import (RedRunTracker, UnhappinessOverflow, averaged_blocked, exp_table,
                                   red_run_profile, unhappiness_breakdown, unhappiness_cost)


def test_profile_leading_red_run():
    prof = red_run_profile([0, 0, 1])
    assert prof.h.tolist() == [0, 0, 2, 3]
    assert prof.phi.tolist() == [0, 2, 0]


def test_profile_all_green():
    assert red_run_profile([1, 1, 1]).phi.tolist() == [0, 0, 0]


def test_profile_terminal_red_run():
    assert red_run_profile([1, 0, 0]).phi.tolist() == [0, 0, 2]


def _runs(theta):
    """Red-run lengths keyed by the (0-based) interval that closes them."""
    out, n, k = {}, len(theta), 0
    while k < n:
        if theta[k] == 0:
            start = k
            while k < n and theta[k] == 0:
                k += 1
            out[k - 1] = k - start
        else:
            k += 1
    return out


@pytest.mark.parametrize("n", range(1, 9))
def test_profile_matches_run_lengths(n):
    for code in range(2 ** n):
        theta = [(code >> i) & 1 for i in range(n)]
        phi = red_run_profile(theta).phi
        expect = np.zeros(n, dtype=int)
        for k, length in _runs(theta).items():
            expect[k] = length
        assert phi.tolist() == expect.tolist(), theta


def test_averaged_blocked_examples():
    theta = [1, 1, 1]
    phi = red_run_profile(theta).phi
    assert not averaged_blocked(np.full((3, 4), 10), np.full((3, 4), 0.5), theta, phi).any()

    theta = [0, 0, 1]
    phi = red_run_profile(theta).phi
    pbar = averaged_blocked(np.full((3, 4), 10), np.full((3, 4), 0.5), theta, phi)
    assert pbar[1, 0] == 5 and pbar[0, 0] == 0 and pbar[2, 0] == 0

    theta = [0, 0]
    phi = red_run_profile(theta).phi
    vols = np.array([[10, 0, 0, 0], [20, 0, 0, 0]])
    assert averaged_blocked(vols, np.ones((2, 4)), theta, phi)[1, 0] == 15


def test_single_red_run_contribution():
    # corner 0 blocked under vertical green: only the horizontal stage is red
    # nobody at corner 0 wants the vertical crossing, so its queue stays at 10
    sc = single_junction([10, 0, 0, 0], alpha=1.0, steps=2)
    tr = simulate(sc, [[1, 1]])
    b = unhappiness_breakdown(tr)
    assert b.pbar[0, 0, 1, 0] == pytest.approx(10.0)
    assert b.terms[0, 0, 1, 0] == pytest.approx(10 * math.exp(30))
    assert b.total == pytest.approx(10 * math.exp(30))


def test_all_served_gives_zero():
    sc = single_junction([0, 0, 0, 0], steps=3)
    assert unhappiness_cost(simulate(sc, [[0, 1, 0]])) == 0


def test_exp_table_additivity_and_guard():
    t = exp_table(4, 15.0)
    assert t[4] == pytest.approx(t[2] * math.exp(2 * 15.0))
    assert exp_table(3, 15.0, in_seconds=False)[3] == pytest.approx(math.exp(3))
    with pytest.raises(UnhappinessOverflow):
        exp_table(50, 15.0)


def test_tracker_matches_literal_cost():
    for seed in range(5):
        sc = gen_scenario(1, 2, steps=6, seed=seed).ped_scenario()
        rng = np.random.default_rng(seed)
        stages = rng.integers(0, 2, (2, 20, 6))
        fast = ped_costs(sc, stages, "unhappiness", exp_table(6, sc.delta))
        for j in range(2):
            for s in range(20):
                sched = np.zeros((2, 6), dtype=int)
                sched[j] = stages[j, s]
                tr = simulate(sc.select([j]), sched[[j]])
                assert fast[j, s] == pytest.approx(unhappiness_cost(tr), rel=1e-12)


def test_tracker_copy_is_independent():
    table = exp_table(3, 15.0)
    t = RedRunTracker((1,), table)
    t.push(np.array([1]), np.ones((1, 4)) * 10, np.full((1, 2, 4), 0.5))
    c = t.copy()
    c.push(np.array([1]), np.ones((1, 4)) * 10, np.full((1, 2, 4), 0.5))
    assert t.finish()[0] != c.finish()[0]
