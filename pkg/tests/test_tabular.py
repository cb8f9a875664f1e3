"""Exact-solver tests: entropy critic, operator, trajectory entropy, bounds."""

from __future__ import annotations

import numpy as np
import pytest

from tecrl.envs import MdpSpec, random_mdp_spec
from tecrl.tabular import (
    TabularPolicy,
    bound_check,
    brute_force_qe,
    contraction_check,
    entropy_bellman_apply,
    entropy_probe_grid,
    exact_q_reward,
    exact_qe,
    horizon_for_bound,
    random_tabular_policy,
    soft_optimal_solve,
    tec_optimal_solve,
    trajectory_entropy,
    truncation_bound,
)


def single_state_mdp(n_actions=2, gamma=0.9, rewards=None):
    P = np.ones((1, n_actions, 1))
    R = np.zeros((1, n_actions)) if rewards is None else np.asarray(rewards, dtype=float)[None, :]
    return MdpSpec(1, n_actions, P, R, gamma)


def entropy_one_policy():
    """Three-action single-state policy with entropy exactly 1 (bisected)."""

    def entropy(p):
        q = (1.0 - p) / 2.0
        return -(p * np.log(p) + 2.0 * q * np.log(q))

    lo, hi = 1.0 / 3.0, 0.95
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if entropy(mid) > 1.0:
            lo = mid
        else:
            hi = mid
    p = 0.5 * (lo + hi)
    assert abs(entropy(p) - 1.0) < 1e-12
    return TabularPolicy(np.array([[p, (1 - p) / 2, (1 - p) / 2]]))


class TestTabularPolicy:
    def test_rejects_bad_rows(self):
        with pytest.raises(ValueError, match="distributions"):
            TabularPolicy(np.array([[0.5, 0.4]]))

    def test_entropy_zero_log_zero_convention(self):
        pol = TabularPolicy(np.array([[1.0, 0.0], [0.5, 0.5]]))
        np.testing.assert_allclose(pol.entropies, [0.0, np.log(2.0)], atol=1e-15)


class TestExactQe:
    def test_deterministic_policy_is_zero(self):
        mdp = random_mdp_spec(5, 3, 0.9, np.random.default_rng(0))
        probs = np.zeros((5, 3))
        probs[:, 1] = 1.0
        np.testing.assert_allclose(exact_qe(mdp, TabularPolicy(probs)), 0.0, atol=1e-14)

    def test_single_state_geometric_series(self):
        # entropy 1 per step, gamma 0.9 -> Q_e = 0.9 / 0.1 = 9.0
        mdp = single_state_mdp(n_actions=3)
        qe = exact_qe(mdp, entropy_one_policy())
        np.testing.assert_allclose(qe, 9.0, atol=1e-9)

    def test_matches_brute_force_on_random_mdp(self):
        rng = np.random.default_rng(42)
        mdp = random_mdp_spec(8, 3, 0.9, rng)
        policy = random_tabular_policy(8, 3, rng)
        horizon = horizon_for_bound(mdp, policy, 1e-8)
        assert truncation_bound(mdp, policy, horizon) <= 1e-8
        np.testing.assert_allclose(exact_qe(mdp, policy),
                                   brute_force_qe(mdp, policy, horizon), atol=1e-6)


class TestBruteForce:
    def test_one_step_unroll(self):
        rng = np.random.default_rng(1)
        mdp = random_mdp_spec(6, 2, 0.8, rng)
        policy = random_tabular_policy(6, 2, rng)
        want = mdp.gamma * np.einsum("sat,t->sa", mdp.P, policy.entropies)
        np.testing.assert_allclose(brute_force_qe(mdp, policy, 1), want, atol=1e-14)

    def test_deterministic_policy_zero_any_horizon(self):
        mdp = random_mdp_spec(4, 2, 0.9, np.random.default_rng(2))
        probs = np.zeros((4, 2))
        probs[:, 0] = 1.0
        for horizon in (1, 5, 50):
            np.testing.assert_array_equal(brute_force_qe(mdp, TabularPolicy(probs), horizon), 0.0)

    def test_monotone_convergence_to_exact(self):
        rng = np.random.default_rng(3)
        mdp = random_mdp_spec(5, 3, 0.9, rng)
        policy = random_tabular_policy(5, 3, rng)
        target = exact_qe(mdp, policy)
        errors = [np.max(np.abs(brute_force_qe(mdp, policy, T) - target))
                  for T in (1, 4, 16, 64, 256)]
        assert all(b < a for a, b in zip(errors, errors[1:]))
        assert errors[-1] < 1e-9


class TestEntropyBellmanOperator:
    def test_exact_solution_is_fixed_point(self):
        rng = np.random.default_rng(4)
        mdp = random_mdp_spec(7, 4, 0.95, rng)
        policy = random_tabular_policy(7, 4, rng)
        qe = exact_qe(mdp, policy)
        np.testing.assert_allclose(entropy_bellman_apply(mdp, policy, qe), qe, atol=1e-10)

    def test_zero_input_on_deterministic_chain(self):
        # deterministic transitions: applying to q = 0 gives gamma * H(next)
        P = np.zeros((3, 2, 3))
        for s in range(3):
            P[s, 0, (s + 1) % 3] = 1.0
            P[s, 1, (s + 2) % 3] = 1.0
        mdp = MdpSpec(3, 2, P, np.zeros((3, 2)), 0.9)
        policy = TabularPolicy(np.array([[0.5, 0.5], [0.9, 0.1], [1.0, 0.0]]))
        out = entropy_bellman_apply(mdp, policy, np.zeros((3, 2)))
        h = policy.entropies
        want = 0.9 * np.array([[h[1], h[2]], [h[2], h[0]], [h[0], h[1]]])
        np.testing.assert_allclose(out, want, atol=1e-14)

    def test_geometric_rate_from_random_init(self):
        rng = np.random.default_rng(5)
        mdp = random_mdp_spec(6, 3, 0.9, rng)
        policy = random_tabular_policy(6, 3, rng)
        q_star = exact_qe(mdp, policy)
        q = rng.normal(size=(6, 3)) * 5.0
        err0 = np.max(np.abs(q - q_star))
        for k in range(1, 25):
            q = entropy_bellman_apply(mdp, policy, q)
            err = np.max(np.abs(q - q_star))
            assert err <= mdp.gamma**k * err0 + 1e-10


class TestContractionCheck:
    def test_constant_shift_is_equality_case(self):
        rng = np.random.default_rng(6)
        mdp = random_mdp_spec(5, 3, 0.9, rng)
        policy = random_tabular_policy(5, 3, rng)
        q1 = rng.normal(size=(5, 3))
        lhs, rhs, holds = contraction_check(mdp, policy, q1, q1 + 2.5)
        assert holds
        assert lhs == pytest.approx(rhs, abs=1e-12)
        assert rhs == pytest.approx(0.9 * 2.5, abs=1e-12)

    def test_identical_inputs_zero(self):
        rng = np.random.default_rng(7)
        mdp = random_mdp_spec(4, 2, 0.8, rng)
        policy = random_tabular_policy(4, 2, rng)
        q = rng.normal(size=(4, 2))
        lhs, _, holds = contraction_check(mdp, policy, q, q.copy())
        assert lhs == 0.0 and holds

    def test_hundred_random_draws_hold(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            s, a = int(rng.integers(2, 10)), int(rng.integers(2, 5))
            mdp = random_mdp_spec(s, a, float(rng.choice([0.5, 0.9, 0.99])), rng)
            policy = random_tabular_policy(s, a, rng)
            q1 = rng.normal(size=(s, a)) * 10.0
            q2 = rng.normal(size=(s, a)) * 10.0
            assert contraction_check(mdp, policy, q1, q2)[2]


class TestTrajectoryEntropy:
    def test_deterministic_policy_zero(self):
        mdp = random_mdp_spec(5, 2, 0.9, np.random.default_rng(9))
        probs = np.zeros((5, 2))
        probs[:, 1] = 1.0
        np.testing.assert_allclose(trajectory_entropy(mdp, TabularPolicy(probs)), 0.0, atol=1e-14)

    def test_single_state_closed_form(self):
        mdp = single_state_mdp(n_actions=2, gamma=0.9)
        policy = TabularPolicy(np.array([[0.5, 0.5]]))
        np.testing.assert_allclose(trajectory_entropy(mdp, policy), np.log(2.0) / 0.1, atol=1e-9)

    def test_internal_consistency_random(self):
        rng = np.random.default_rng(10)
        for _ in range(25):
            s, a = int(rng.integers(2, 9)), int(rng.integers(2, 5))
            mdp = random_mdp_spec(s, a, 0.95, rng)
            policy = random_tabular_policy(s, a, rng)
            traj = trajectory_entropy(mdp, policy)  # raises on >1e-9 mismatch
            qe = exact_qe(mdp, policy)
            want = policy.entropies + (policy.probs * qe).sum(axis=1)
            np.testing.assert_allclose(traj, want, atol=1e-9)

    def test_forward_propagation_oracle(self):
        # independent check: accumulate discounted entropies along occupancies
        rng = np.random.default_rng(11)
        mdp = random_mdp_spec(6, 3, 0.9, rng)
        policy = random_tabular_policy(6, 3, rng)
        p_pi = np.einsum("sa,sat->st", policy.probs, mdp.P)
        occupancy = np.eye(6)
        total = np.zeros(6)
        for t in range(400):
            total += mdp.gamma**t * occupancy @ policy.entropies
            occupancy = occupancy @ p_pi
        np.testing.assert_allclose(trajectory_entropy(mdp, policy), total, atol=1e-8)


class TestSoftOptimalSolve:
    def test_two_armed_bandit_closed_form(self):
        # rewards (1, 0), alpha = 0.5, negligible discount:
        # pi(a1) = exp(2) / (exp(2) + 1), return = pi(a1)
        mdp = single_state_mdp(n_actions=2, gamma=1e-6, rewards=[1.0, 0.0])
        sol = soft_optimal_solve(mdp, alpha=0.5)
        p1 = np.exp(2.0) / (np.exp(2.0) + 1.0)
        h = -(p1 * np.log(p1) + (1 - p1) * np.log(1 - p1))
        assert sol.policy.probs[0, 0] == pytest.approx(p1, abs=1e-5)
        assert sol.return_value == pytest.approx(p1, abs=1e-4)
        assert sol.trajectory_entropy == pytest.approx(h, abs=1e-4)

    def test_zero_temperature_limit_is_greedy(self):
        mdp = random_mdp_spec(5, 3, 0.9, np.random.default_rng(12))
        sol = soft_optimal_solve(mdp, alpha=1e-4)
        assert np.all(sol.policy.probs.max(axis=1) > 1.0 - 1e-9)

    def test_infinite_temperature_limit_is_uniform(self):
        mdp = random_mdp_spec(4, 3, 0.9, np.random.default_rng(13))
        sol = soft_optimal_solve(mdp, alpha=1e3)
        np.testing.assert_allclose(sol.policy.probs, 1.0 / 3.0, atol=1e-3)
        uniform = TabularPolicy(np.full((4, 3), 1.0 / 3.0))
        h_max = float(mdp.start_distribution() @ trajectory_entropy(mdp, uniform))
        assert sol.trajectory_entropy == pytest.approx(h_max, rel=1e-3)

    def test_rejects_bad_alpha(self):
        mdp = single_state_mdp()
        with pytest.raises(ValueError, match="alpha"):
            soft_optimal_solve(mdp, alpha=0.0)


class TestTecOptimalSolve:
    def test_inversion_consistency(self):
        mdp = random_mdp_spec(5, 3, 0.9, np.random.default_rng(14))
        alpha0 = 0.7
        probe = soft_optimal_solve(mdp, alpha0)
        sol = tec_optimal_solve(mdp, probe.trajectory_entropy)
        assert sol.achieved_entropy == pytest.approx(probe.trajectory_entropy, rel=1e-7)
        assert sol.alpha == pytest.approx(alpha0, rel=0.2)
        assert sol.return_value == pytest.approx(probe.return_value, abs=1e-6)

    def test_zero_budget_is_near_greedy(self):
        rng = np.random.default_rng(15)
        mdp = random_mdp_spec(5, 3, 0.9, rng)
        sol = tec_optimal_solve(mdp, 0.0)
        assert sol.alpha < 0.05
        # independent greedy oracle: plain max value iteration
        v = np.zeros(5)
        for _ in range(3000):
            q = mdp.R + mdp.gamma * np.einsum("sat,t->sa", mdp.P, v)
            v = q.max(axis=1)
        greedy = np.zeros((5, 3))
        greedy[np.arange(5), q.argmax(axis=1)] = 1.0
        r_greedy = float(mdp.start_distribution()
                         @ (greedy * exact_q_reward(mdp, TabularPolicy(greedy))).sum(axis=1))
        assert sol.return_value == pytest.approx(r_greedy, abs=1e-3)

    def test_infeasible_budget_reports_interval(self):
        mdp = random_mdp_spec(4, 3, 0.9, np.random.default_rng(16))
        with pytest.raises(ValueError, match="feasible entropy range"):
            tec_optimal_solve(mdp, 1e6)

    def test_random_solves_converge_quickly(self):
        rng = np.random.default_rng(17)
        for _ in range(5):
            mdp = random_mdp_spec(int(rng.integers(3, 8)), int(rng.integers(2, 4)), 0.9, rng)
            grid = entropy_probe_grid(mdp)
            for frac in (0.2, 0.5, 0.8):
                budget = grid[0] + frac * (grid[-1] - grid[0])
                sol = tec_optimal_solve(mdp, float(budget), probe_entropies=grid)
                assert sol.bisection_steps <= 60


class TestBoundCheck:
    def test_equality_case_zero_slack(self):
        mdp = random_mdp_spec(5, 3, 0.9, np.random.default_rng(18))
        alpha_star = 0.5
        h_star = soft_optimal_solve(mdp, alpha_star).trajectory_entropy
        report = bound_check(mdp, alpha_star, h_star)
        assert abs(report.slack) <= 1e-8
        assert report.rhs == pytest.approx(report.r_maxent_star, abs=1e-8)

    def test_tighter_budgets_only_raise_rhs(self):
        mdp = random_mdp_spec(6, 3, 0.9, np.random.default_rng(19))
        alpha_star = 1.0
        h_star = soft_optimal_solve(mdp, alpha_star).trajectory_entropy
        grid = entropy_probe_grid(mdp)
        budgets = np.linspace(h_star, float(grid[0] + 0.2 * (h_star - grid[0])), 4)
        reports = [bound_check(mdp, alpha_star, float(b), probe_entropies=grid) for b in budgets]
        for rep in reports:
            assert rep.slack >= -1e-8
        rhs_values = [rep.rhs for rep in reports]
        assert all(b >= a - 1e-12 for a, b in zip(rhs_values, rhs_values[1:]))
