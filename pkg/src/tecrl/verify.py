"""Randomized verification suites over the exact tabular solvers.

Each suite certifies one provable property on a fixed-seed randomized
family of MDPs and reports machine-readable (name, trials, failures,
worst slack) records. A negative ``worst`` means the property held with
margin everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .envs import random_mdp_spec
from .tabular import (
    bound_check,
    brute_force_qe,
    contraction_check,
    entropy_bellman_apply,
    entropy_probe_grid,
    exact_qe,
    horizon_for_bound,
    random_tabular_policy,
    soft_optimal_solve,
    trajectory_entropy,
)

__all__ = ["SuiteResult", "SUITE_NAMES", "run_suite", "report_to_json"]

SUITE_NAMES = ("contraction", "fixed-point", "oracle-equivalence", "bound", "all")


@dataclass
class SuiteResult:
    name: str
    trials: int
    failures: int
    worst: float
    description: str

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def row(self) -> dict:
        return {"name": self.name, "trials": self.trials, "failures": self.failures,
                "worst_slack": self.worst, "passed": self.passed,
                "description": self.description}


def _random_instance(rng, gamma=None):
    s = int(rng.integers(2, 11))
    a = int(rng.integers(2, 6))
    g = float(rng.choice([0.5, 0.9, 0.99])) if gamma is None else gamma
    mdp = random_mdp_spec(s, a, g, rng)
    return mdp, random_tabular_policy(s, a, rng)


def contraction_suite(trials_per_gamma: int = 1000, seed: int = 2024) -> SuiteResult:
    """Sup-norm contraction of the entropy Bellman operator."""
    rng = np.random.default_rng(seed)
    failures = 0
    worst = -np.inf
    trials = 0
    for gamma in (0.5, 0.9, 0.99):
        for _ in range(trials_per_gamma):
            mdp, policy = _random_instance(rng, gamma=gamma)
            q1 = rng.normal(size=(mdp.n_states, mdp.n_actions)) * 10.0
            q2 = rng.normal(size=(mdp.n_states, mdp.n_actions)) * 10.0
            lhs, rhs, holds = contraction_check(mdp, policy, q1, q2)
            worst = max(worst, lhs - rhs)
            failures += 0 if holds else 1
            trials += 1
    return SuiteResult("contraction", trials, failures, worst,
                       "operator distance minus gamma-scaled input distance (must be <= 1e-12)")


def fixed_point_suite(n_inits: int = 50, seed: int = 2025) -> SuiteResult:
    """Geometric convergence rate toward the unique fixed point.

    Ratios are certified down to an error floor of 1e-4 * (1 + |q*|): one
    operator application carries roundoff of order eps * |q*|, so below that
    floor the computed ratio is roundoff over the 1e-10 slack, not rate.
    """
    rng = np.random.default_rng(seed)
    failures = 0
    worst = -np.inf
    for _ in range(n_inits):
        mdp, policy = _random_instance(rng)
        q_star = exact_qe(mdp, policy)
        q = rng.normal(size=(mdp.n_states, mdp.n_actions)) * 10.0
        err = np.max(np.abs(q - q_star))
        floor = 1e-4 * (1.0 + np.max(np.abs(q_star)))
        while err > floor:
            q = entropy_bellman_apply(mdp, policy, q)
            new_err = np.max(np.abs(q - q_star))
            ratio = new_err / err if err > 0.0 else 0.0
            worst = max(worst, ratio - mdp.gamma)
            if ratio > mdp.gamma + 1e-10:
                failures += 1
                break
            err = new_err
    return SuiteResult("fixed-point", n_inits, failures, worst,
                       "per-step sup-norm error ratio minus gamma (must be <= 1e-10)")


def oracle_equivalence_suite(n_mdps: int = 100, seed: int = 2026) -> list[SuiteResult]:
    """Linear solve vs truncated DP, and the trajectory-entropy decomposition."""
    rng = np.random.default_rng(seed)
    solver_failures = 0
    solver_worst = -np.inf
    decomp_failures = 0
    decomp_worst = -np.inf
    for _ in range(n_mdps):
        mdp, policy = _random_instance(rng)
        horizon = horizon_for_bound(mdp, policy, 1e-8)
        gap = float(np.max(np.abs(exact_qe(mdp, policy) - brute_force_qe(mdp, policy, horizon))))
        solver_worst = max(solver_worst, gap - 1e-6)
        solver_failures += 0 if gap <= 1e-6 else 1

        traj = trajectory_entropy(mdp, policy)
        decomposition = ((~mdp.terminal_mask)
                         * (policy.entropies + (policy.probs * exact_qe(mdp, policy)).sum(axis=1)))
        dgap = float(np.max(np.abs(traj - decomposition)))
        decomp_worst = max(decomp_worst, dgap - 1e-9)
        decomp_failures += 0 if dgap <= 1e-9 else 1
    return [
        SuiteResult("oracle-equivalence", n_mdps, solver_failures, solver_worst,
                    "exact solve vs truncated-DP oracle gap minus 1e-6"),
        SuiteResult("entropy-decomposition", n_mdps, decomp_failures, decomp_worst,
                    "trajectory entropy vs step entropy + critic expectation, minus 1e-9"),
    ]


def bound_suite(n_mdps: int = 20, budgets_per_mdp: int = 5, seed: int = 2027) -> list[SuiteResult]:
    """Constrained-return upper bound, plus the zero-slack equality case."""
    rng = np.random.default_rng(seed)
    sweep_failures = 0
    sweep_worst = -np.inf
    sweep_trials = 0
    eq_failures = 0
    eq_worst = -np.inf
    for _ in range(n_mdps):
        s = int(rng.integers(2, 11))
        a = int(rng.integers(2, 6))
        mdp = random_mdp_spec(s, a, float(rng.choice([0.5, 0.9, 0.95])), rng)
        grid = entropy_probe_grid(mdp)
        alpha_star = float(rng.uniform(0.2, 2.0))
        h_star = soft_optimal_solve(mdp, alpha_star).trajectory_entropy
        for frac in np.linspace(0.1, 0.9, budgets_per_mdp):
            budget = float(grid[0] + frac * (h_star - grid[0]))
            report = bound_check(mdp, alpha_star, budget, probe_entropies=grid)
            sweep_worst = max(sweep_worst, -report.slack - 1e-8)
            sweep_failures += 0 if report.slack >= -1e-8 else 1
            sweep_trials += 1
        eq = bound_check(mdp, alpha_star, h_star, probe_entropies=grid)
        eq_worst = max(eq_worst, abs(eq.slack) - 1e-8)
        eq_failures += 0 if abs(eq.slack) <= 1e-8 else 1
    return [
        SuiteResult("bound", sweep_trials, sweep_failures, sweep_worst,
                    "negative slack beyond the 1e-8 floor"),
        SuiteResult("bound-equality", n_mdps, eq_failures, eq_worst,
                    "absolute slack minus 1e-8 when the budget equals the soft optimum entropy"),
    ]


def run_suite(name: str) -> list[SuiteResult]:
    if name == "contraction":
        return [contraction_suite()]
    if name == "fixed-point":
        return [fixed_point_suite()]
    if name == "oracle-equivalence":
        return oracle_equivalence_suite()
    if name == "bound":
        return bound_suite()
    if name == "all":
        results = []
        for suite in SUITE_NAMES[:-1]:
            results.extend(run_suite(suite))
        return results
    raise ValueError(f"unknown suite {name!r}; valid suites: {', '.join(SUITE_NAMES)}")


def report_to_json(results: list[SuiteResult]) -> str:
    return json.dumps({"suites": [r.row() for r in results],
                       "passed": all(r.passed for r in results)}, sort_keys=True)
