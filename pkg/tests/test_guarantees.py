import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hubmpc.guarantees import (GuaranteeConfig, certify, empirical_violation, epsilon_bound,
                               epsilon_closed_form, find_support_subsample, greedy_support,
                               result_from_dict, same_solution)
from hubmpc.hub_model import HubParameters, HubState, Tariffs
from hubmpc.optimizer import LPBuilder, solve_lp
from hubmpc.sampler import ScenarioSet
from hubmpc.scenario_mpc import SPConfig, SPProblem, solve_scenarios


def identity_sum(M, beta):
    return sum(math.comb(M, s) * (1.0 - epsilon_closed_form(s, M, beta)) ** (M - s)
               for s in range(M))


@pytest.mark.parametrize("beta", [0.1, 0.01, 1e-4])
def test_binomial_identity(beta):
    for M in range(1, 31):
        assert abs(identity_sum(M, beta) - beta) < 1e-10


def test_closed_form_against_direct_formula():
    beta, M, s = 1e-3, 100, 10
    direct = 1.0 - (beta / (M * math.comb(M, s))) ** (1.0 / (M - s))
    assert epsilon_closed_form(s, M, beta) == pytest.approx(direct, rel=1e-12)
    assert epsilon_closed_form(5, 5, 0.05) == 1.0


def test_large_M_does_not_overflow():
    eps = epsilon_closed_form(1000, 10**6, 1e-6)
    assert 0.0 < eps < 0.02
    assert np.isfinite(epsilon_bound(1000, 10**6, 1e-6))


def test_below_log_bound():
    for M in range(1, 101):
        for s in range(M):
            assert epsilon_closed_form(s, M, 0.05) <= epsilon_bound(s, M, 0.05) + 1e-12


def test_bound_examples():
    M = 40
    assert epsilon_bound(0, M, 1 - 1e-12) == pytest.approx(math.log(M) / M, rel=1e-9)
    for s in (0, 3, 17):
        diff = epsilon_bound(s, M, 0.025) - epsilon_bound(s, M, 0.05)
        assert diff == pytest.approx(math.log(2) / (M - s), rel=1e-12)
    with pytest.raises(ValueError):
        epsilon_bound(M, M, 0.05)


def test_bound_nonincreasing_in_M():
    for s in (0, 2, 5):
        vals = [epsilon_bound(s, M, 0.05) for M in range(s + 1, 201)]
        assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))


def test_epsilon_monotone_sweeps():
    for M in (5, 30, 200):
        e = [epsilon_closed_form(s, M, 0.05) for s in range(M + 1)]
        assert all(b >= a for a, b in zip(e, e[1:]))
    for s in (0, 4):
        e = [epsilon_closed_form(s, M, 0.05) for M in range(s + 1, 201)]
        assert all(b <= a + 1e-15 for a, b in zip(e, e[1:]))
    e = [epsilon_closed_form(3, 50, b) for b in (1e-6, 1e-3, 0.05, 0.5)]
    assert all(b <= a for a, b in zip(e, e[1:]))


@pytest.mark.parametrize("s,M,beta", [(-1, 5, 0.1), (6, 5, 0.1), (0, 0, 0.1), (1, 5, 0.0),
                                      (1, 5, 1.0)])
def test_rejects_out_of_range(s, M, beta):
    with pytest.raises(ValueError):
        epsilon_closed_form(s, M, beta)


@settings(max_examples=50)
@given(st.integers(1, 500), st.data(), st.floats(1e-9, 0.999))
def test_epsilon_in_unit_interval(M, data, beta):
    s = data.draw(st.integers(0, M))
    assert 0.0 <= epsilon_closed_form(s, M, beta) <= 1.0


def test_same_solution_relative():
    a = np.array([1000.0, 2.0])
    assert same_solution(a + 5e-4, a, 1e-6)
    assert not same_solution(a + 5e-3, a, 1e-6)
    assert not same_solution(a, a[:1], 1e-6)


def cover_lp(d):
    """min sum(q) s.t. q_j >= d_ij for every row i: q is the column max."""
    b = LPBuilder()
    q = [b.add_var(f"q{j}", lb=-1e3, cost=1.0) for j in range(d.shape[1])]
    for row in d:
        for j, v in enumerate(row):
            b.add_row({q[j]: 1.0}, "G", v)
    return solve_lp(b.build()).x


def cover_lp_solver(d):
    return lambda kept: cover_lp(d[kept])


def test_planted_support_keeps_only_binding():
    rng = np.random.default_rng(0)
    d = rng.uniform(0, 1, (12, 2))
    d[3] = [5.0, 0.0]  # binding in the first coordinate
    d[8] = [0.0, 7.0]  # binding in the second
    solve = cover_lp_solver(d)
    ref = solve(np.arange(12))
    removed, solves = greedy_support(solve, 12, ref)
    assert sorted(set(range(12)) - set(removed)) == [3, 8]
    assert solves == 12
    # irreducible: dropping any retained scenario moves the solution
    for i in (3, 8):
        kept = [j for j in range(12) if j not in removed and j != i]
        assert not same_solution(solve(np.array(kept)), ref, 1e-6)


def test_greedy_reports_failure():
    def solve(kept):
        if len(kept) < 3:
            raise RuntimeError("infeasible")
        return np.zeros(1)
    with pytest.raises(RuntimeError, match="confirmed removals"):
        greedy_support(solve, 4, np.zeros(1))


def hub_problem(T=4):
    return SPProblem(HubState(100.0, 1500.0), HubParameters(), Tariffs.constant(T),
                     np.full(T, 0.3), SPConfig(T=T))


def test_duplicates_have_unit_support():
    rng = np.random.default_rng(1)
    p = hub_problem()
    one = ScenarioSet(rng.uniform(50, 250, (1, 4)), rng.uniform(50, 400, (1, 4)))
    sc = one.subset([0] * 6)
    sol = solve_scenarios(p, sc)
    res = certify(sol, sc, p, GuaranteeConfig(beta=0.05))
    assert res.s_star == 1 and res.removed == [0, 1, 2, 3, 4]
    assert res.epsilon == epsilon_closed_form(1, 6, 0.05)
    assert not res.vacuous


def test_single_scenario_support():
    rng = np.random.default_rng(2)
    p = hub_problem()
    sc = ScenarioSet(rng.uniform(50, 250, (1, 4)), rng.uniform(50, 400, (1, 4)))
    sol = solve_scenarios(p, sc)
    res = certify(sol, sc, p, GuaranteeConfig())
    assert res.s_star in (0, 1)
    if res.s_star == 1:
        assert res.vacuous and res.epsilon == 1.0 and res.bound == float("inf")


def test_vacuous_certificate_written(tmp_path):
    d = np.array([[1.0, 0.0], [0.0, 1.0]])

    class Plan:  # the toy solution exposes the same comparison vector as SPSolution
        def __init__(self, x):
            self.x = x

        def shared_vector(self):
            return self.x

    res = find_support_subsample(lambda s: Plan(cover_lp(s.L_e)), ScenarioSet(d, d),
                                 Plan(cover_lp(d)), GuaranteeConfig())
    assert res.s_star == 2 and res.epsilon == 1.0 and res.vacuous
    res.write_json(tmp_path / "c.json")
    doc = json.loads((tmp_path / "c.json").read_text())
    assert doc["vacuous"] is True and "scenario-generating distribution" in doc["statement"]
    assert result_from_dict(doc).s_star == 2


def test_shuffled_order_is_seeded():
    rng = np.random.default_rng(3)
    p = hub_problem(3)
    sc = ScenarioSet(rng.uniform(50, 250, (4, 3)), rng.uniform(50, 400, (4, 3)))
    sol = solve_scenarios(p, sc)
    a = certify(sol, sc, p, GuaranteeConfig(shuffle_seed=7))
    b = certify(sol, sc, p, GuaranteeConfig(shuffle_seed=7))
    assert a.removed == b.removed and a.solves == 4


def test_empirical_violation_in_sample_is_zero():
    rng = np.random.default_rng(4)
    p = hub_problem(6)
    sc = ScenarioSet(rng.uniform(50, 250, (5, 6)), rng.uniform(300, 700, (5, 6)))
    sol = solve_scenarios(p, sc)
    assert empirical_violation(sol, sc, p.state.ts_level, p.params) == 0.0


def test_empirical_violation_with_covering_slack():
    rng = np.random.default_rng(5)
    p = hub_problem(6)
    sol = solve_scenarios(p, ScenarioSet(rng.uniform(50, 250, (2, 6)),
                                         rng.uniform(300, 700, (2, 6))))
    sol.sigma_plus = np.full(6, 1e9)
    sol.sigma_minus = np.full(6, 1e9)
    fresh = ScenarioSet(rng.uniform(0, 2000, (50, 6)), rng.uniform(0, 2000, (50, 6)))
    assert empirical_violation(sol, fresh, p.state.ts_level, p.params) == 0.0


def test_empirical_violation_agrees_with_large_sample():
    # a small store so that fresh heat demand often overruns it
    rng = np.random.default_rng(6)
    T = 4
    params = HubParameters(ts_max=400.0)
    p = SPProblem(HubState(100.0, 200.0), params, Tariffs.constant(T), np.zeros(T),
                  SPConfig(T=T))
    draw = lambda n: ScenarioSet(rng.uniform(100, 200, (n, T)),  # noqa: E731
                                 rng.normal(250, 60, (n, T)).clip(0))
    sol = solve_scenarios(p, draw(5))
    truth = empirical_violation(sol, draw(100_000), 200.0, params)
    n = 2000
    est = empirical_violation(sol, draw(n), 200.0, params)
    assert 0.02 < truth < 0.98
    assert abs(est - truth) <= 4 * math.sqrt(truth * (1 - truth) / n)
