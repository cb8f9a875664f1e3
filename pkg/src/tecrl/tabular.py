"""Exact tabular solvers for every provable claim about the framework.

Everything here is function-approximation-free: entropy critics and
trajectory entropies come from direct linear solves, the entropy Bellman
operator is applied in closed form, soft-optimal policies come from soft
value iteration run to machine tolerance, and the constrained-optimal
return is found by bisecting the temperature against the trajectory-entropy
budget. All operations are pure functions of their inputs.

Conventions: trajectory entropy counts the current step (t = 0); the
entropy critic counts from the next step (t = 1); terminal states generate
neither reward nor entropy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import MdpSpec

__all__ = [
    "TabularPolicy",
    "BoundReport",
    "SoftSolution",
    "TecSolution",
    "random_tabular_policy",
    "exact_qe",
    "exact_q_reward",
    "brute_force_qe",
    "entropy_bellman_apply",
    "contraction_check",
    "trajectory_entropy",
    "soft_optimal_solve",
    "tec_optimal_solve",
    "bound_check",
]

ALPHA_LO = 1e-4
ALPHA_HI = 1e3


@dataclass
class TabularPolicy:
    """Row-stochastic action probabilities with per-state entropies."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        rows = self.probs.sum(axis=1)
        if np.max(np.abs(rows - 1.0)) > 1e-12 or np.any(self.probs < 0.0):
            raise ValueError("policy rows must be distributions (sum 1 within 1e-12)")

    @property
    def entropies(self) -> np.ndarray:
        """Per-state entropy with the 0 * log 0 := 0 convention."""
        p = self.probs
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p > 0.0, p * np.log(p), 0.0)
        return -terms.sum(axis=1)


def random_tabular_policy(n_states: int, n_actions: int, rng: np.random.Generator) -> TabularPolicy:
    return TabularPolicy(rng.dirichlet(np.ones(n_actions), size=n_states))


def _continuation(mdp: MdpSpec) -> np.ndarray:
    return (~mdp.terminal_mask).astype(np.float64)


def _policy_transition(mdp: MdpSpec, policy: TabularPolicy) -> np.ndarray:
    """State-to-state kernel under the policy: P_pi[s, s']."""
    return np.einsum("sa,sat->st", policy.probs, mdp.P)


def exact_qe(mdp: MdpSpec, policy: TabularPolicy, residual_tol: float = 1e-10) -> np.ndarray:
    """Entropy critic by direct linear solve.

    Solves v = gamma P_pi C (h + v) for the state-level cumulative entropy
    from the next step on, then expands to Q_e(s, a) = gamma sum_s' P C
    (h + v). The fixed-point residual is checked against ``residual_tol``.
    """
    c = _continuation(mdp)
    p_pi = _policy_transition(mdp, policy) * c[None, :]
    n = mdp.n_states
    v = np.linalg.solve(np.eye(n) - mdp.gamma * p_pi, mdp.gamma * p_pi @ policy.entropies)
    qe = mdp.gamma * np.einsum("sat,t->sa", mdp.P, c * (policy.entropies + v))
    residual = np.max(np.abs(entropy_bellman_apply(mdp, policy, qe) - qe))
    if residual > residual_tol:
        raise ArithmeticError(f"entropy critic solve residual {residual:.3e} exceeds {residual_tol:.1e}")
    return qe


def exact_q_reward(mdp: MdpSpec, policy: TabularPolicy) -> np.ndarray:
    """Reward critic by direct linear solve: Q(s,a) = r + gamma sum P C v."""
    c = _continuation(mdp)
    r_pi = (policy.probs * mdp.R).sum(axis=1) * c
    p_pi = _policy_transition(mdp, policy) * c[None, :]
    n = mdp.n_states
    v = np.linalg.solve(np.eye(n) - mdp.gamma * p_pi, r_pi)
    return mdp.R + mdp.gamma * np.einsum("sat,t->sa", mdp.P, c * v)


def brute_force_qe(mdp: MdpSpec, policy: TabularPolicy, horizon: int) -> np.ndarray:
    """Independent finite-horizon oracle for the entropy critic.

    Propagates state-occupancy distributions forward from every (s, a) and
    sums gamma^t * E[entropy at step t] for t = 1 .. horizon. Truncation
    error is bounded by gamma^(horizon+1) * max entropy / (1 - gamma).
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    c = _continuation(mdp)
    h = policy.entropies
    p_pi = _policy_transition(mdp, policy)
    total = np.zeros((mdp.n_states, mdp.n_actions))
    occupancy = mdp.P.copy()  # occupancy[s, a, s'] = P(state at t | s, a)
    discount = mdp.gamma
    for _ in range(horizon):
        total += discount * occupancy @ (c * h)
        occupancy = (occupancy * c[None, None, :]) @ p_pi
        discount *= mdp.gamma
    return total


def truncation_bound(mdp: MdpSpec, policy: TabularPolicy, horizon: int) -> float:
    h_max = float(policy.entropies.max(initial=0.0))
    return mdp.gamma ** (horizon + 1) * h_max / (1.0 - mdp.gamma)


def horizon_for_bound(mdp: MdpSpec, policy: TabularPolicy, bound: float) -> int:
    """Smallest horizon whose truncation bound is at or below ``bound``."""
    h_max = float(policy.entropies.max(initial=0.0))
    if h_max == 0.0:
        return 1
    t = 1
    while mdp.gamma ** (t + 1) * h_max / (1.0 - mdp.gamma) > bound:
        t += 1
    return t


def entropy_bellman_apply(mdp: MdpSpec, policy: TabularPolicy, q: np.ndarray) -> np.ndarray:
    """One exact application of the entropy Bellman operator."""
    q = np.asarray(q, dtype=np.float64)
    c = _continuation(mdp)
    v = policy.entropies + (policy.probs * q).sum(axis=1)
    return mdp.gamma * np.einsum("sat,t->sa", mdp.P, c * v)


def contraction_check(mdp: MdpSpec, policy: TabularPolicy, q1: np.ndarray,
                      q2: np.ndarray) -> tuple[float, float, bool]:
    """Sup-norm contraction certificate for one operator application."""
    lhs = float(np.max(np.abs(entropy_bellman_apply(mdp, policy, q1)
                              - entropy_bellman_apply(mdp, policy, q2))))
    rhs = mdp.gamma * float(np.max(np.abs(np.asarray(q1) - np.asarray(q2))))
    return lhs, rhs, lhs <= rhs + 1e-12


def trajectory_entropy(mdp: MdpSpec, policy: TabularPolicy,
                       consistency_tol: float = 1e-9) -> np.ndarray:
    """Per-state discounted trajectory entropy, current step included.

    Solves t = C (h + gamma P_pi t) and cross-checks the decomposition
    t(s) = h(s) + sum_a pi(a|s) Q_e(s, a) against the independent critic
    solve, raising if the two disagree beyond ``consistency_tol``.
    """
    c = _continuation(mdp)
    p_pi = _policy_transition(mdp, policy)
    n = mdp.n_states
    lhs = np.eye(n) - mdp.gamma * (c[:, None] * p_pi)
    traj = np.linalg.solve(lhs, c * policy.entropies)
    decomposition = c * (policy.entropies + (policy.probs * exact_qe(mdp, policy)).sum(axis=1))
    gap = float(np.max(np.abs(traj - decomposition)))
    if gap > consistency_tol:
        raise ArithmeticError(f"trajectory entropy decomposition mismatch {gap:.3e}")
    return traj


def _stable_softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class SoftSolution:
    policy: TabularPolicy
    q_soft: np.ndarray
    return_value: float       # exact discounted return, start-state averaged
    trajectory_entropy: float  # exact discounted entropy, start-state averaged
    alpha: float
    iterations: int


def soft_optimal_solve(mdp: MdpSpec, alpha: float, tol: float = 1e-12,
                       max_iterations: int = 200_000) -> SoftSolution:
    """Entropy-regularized optimal policy by soft value iteration.

    Iterates v(s) = alpha * logsumexp(Q(s, .) / alpha) with
    Q = r + gamma P C v until the sup-norm change is at most ``tol``; the
    induced policy is the softmax of Q / alpha. Return and trajectory
    entropy of that policy are then computed exactly.
    """
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    c = _continuation(mdp)
    shape = (mdp.n_states, mdp.n_actions)
    p_flat = np.ascontiguousarray(mdp.P.reshape(-1, mdp.n_states))
    v = np.zeros(mdp.n_states)
    for iteration in range(1, max_iterations + 1):
        q = mdp.R + mdp.gamma * (p_flat @ (c * v)).reshape(shape)
        scaled = q / alpha
        m = scaled.max(axis=1)
        v_new = c * (alpha * (m + np.log(np.exp(scaled - m[:, None]).sum(axis=1))))
        change = float(np.max(np.abs(v_new - v)))
        v = v_new
        if change <= tol:
            break
    else:
        raise ArithmeticError(f"soft value iteration did not reach {tol:.1e}; residual {change:.3e}")
    q = mdp.R + mdp.gamma * (p_flat @ (c * v)).reshape(shape)
    policy = TabularPolicy(_stable_softmax(q / alpha))
    start = mdp.start_distribution()
    r_exact = float(start @ ((policy.probs * exact_q_reward(mdp, policy)).sum(axis=1) * c))
    h_exact = float(start @ trajectory_entropy(mdp, policy))
    return SoftSolution(policy, q, r_exact, h_exact, alpha, iteration)


@dataclass
class TecSolution:
    policy: TabularPolicy
    return_value: float
    alpha: float
    achieved_entropy: float
    bisection_steps: int


def _entropy_at(mdp: MdpSpec, alpha: float) -> tuple[float, SoftSolution]:
    sol = soft_optimal_solve(mdp, alpha)
    return sol.trajectory_entropy, sol


def entropy_probe_grid(mdp: MdpSpec, alpha_lo: float = ALPHA_LO, alpha_hi: float = ALPHA_HI,
                       probe_count: int = 16) -> np.ndarray:
    """Exact trajectory entropies on a log-spaced temperature grid."""
    probes = np.geomspace(alpha_lo, alpha_hi, probe_count)
    return np.array([_entropy_at(mdp, float(a))[0] for a in probes])


def tec_optimal_solve(mdp: MdpSpec, h_budget: float, alpha_lo: float = ALPHA_LO,
                      alpha_hi: float = ALPHA_HI, probe_count: int = 16,
                      rel_tol: float = 1e-8, max_steps: int = 200,
                      probe_entropies: np.ndarray = None) -> TecSolution:
    """Exact constrained-optimal policy for a trajectory-entropy budget.

    Bisects the temperature so the soft-optimal policy's exact trajectory
    entropy meets the budget. Monotonicity of entropy in the temperature is
    verified empirically on a log-spaced probe grid before bisecting
    (precomputed grids may be passed in), and budgets outside the achievable
    range raise with the feasible interval.
    """
    if probe_entropies is None:
        entropies = entropy_probe_grid(mdp, alpha_lo, alpha_hi, probe_count)
    else:
        entropies = np.asarray(probe_entropies, dtype=np.float64)
    if np.any(np.diff(entropies) < -1e-9):
        raise ArithmeticError("trajectory entropy is not monotone in the temperature on this MDP")
    atol = max(rel_tol * abs(h_budget), 1e-9)
    if h_budget < entropies[0] - atol or h_budget > entropies[-1] + atol:
        raise ValueError(
            f"budget {h_budget:.6g} outside feasible entropy range "
            f"[{entropies[0]:.6g}, {entropies[-1]:.6g}] for temperatures "
            f"[{alpha_lo:.1e}, {alpha_hi:.1e}]"
        )
    lo, hi = np.log(alpha_lo), np.log(alpha_hi)
    best = None
    for step in range(1, max_steps + 1):
        mid = 0.5 * (lo + hi)
        h_mid, sol = _entropy_at(mdp, float(np.exp(mid)))
        best = sol
        if abs(h_mid - h_budget) <= atol:
            break
        if h_mid < h_budget:
            lo = mid
        else:
            hi = mid
    else:
        raise ArithmeticError(
            f"bisection failed to hit budget {h_budget:.6g} within {max_steps} steps; "
            f"last entropy {h_mid:.6g}"
        )
    return TecSolution(best.policy, best.return_value, best.alpha,
                       best.trajectory_entropy, step)


@dataclass
class BoundReport:
    """All terms of the constrained-return upper bound."""

    r_tec: float
    r_maxent_star: float
    alpha_star: float
    h_soft_star: float
    h_budget: float
    rhs: float
    slack: float


def bound_check(mdp: MdpSpec, alpha_star: float, h_budget: float,
                probe_entropies: np.ndarray = None, rel_tol: float = 1e-10) -> BoundReport:
    """Certify r_tec <= r* + alpha* (h* - h_budget) on one instance.

    The constrained solve runs at a tighter tolerance than its standalone
    default so the certified slack is dominated by the bound itself, not by
    bisection slop (the slack floor is 1e-8).
    """
    soft = soft_optimal_solve(mdp, alpha_star)
    tec = tec_optimal_solve(mdp, h_budget, probe_entropies=probe_entropies, rel_tol=rel_tol)
    rhs = soft.return_value + alpha_star * (soft.trajectory_entropy - h_budget)
    report = BoundReport(
        r_tec=tec.return_value,
        r_maxent_star=soft.return_value,
        alpha_star=alpha_star,
        h_soft_star=soft.trajectory_entropy,
        h_budget=h_budget,
        rhs=rhs,
        slack=rhs - tec.return_value,
    )
    for name, value in vars(report).items():
        if not np.isfinite(value):
            raise ArithmeticError(f"nonfinite bound term {name}")
    return report
