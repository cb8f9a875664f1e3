"""Decoupled reward and entropy critics with their bootstrap targets.

The reward critic is a twin pair whose target bootstraps through the
elementwise minimum; the entropy critic is a single head (its targets are
policy-intrinsic and low-variance). Neither target ever sees the
temperature: scaling it cannot move these values, which is the point of the
decoupling. Both bootstrap from slow target copies, and time-limit
truncations keep their continuation term (only genuine terminals cut it).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Mlp, ParamStore, Tape, polyak_update

__all__ = [
    "CriticPair",
    "BatchTargets",
    "pev_target",
    "pis_target",
    "batch_targets",
    "pev_loss",
    "pis_loss",
    "twin_mse_loss",
    "cumulative_entropy_estimate",
    "ENTROPY_ESTIMATORS",
]

ENTROPY_ESTIMATORS = ("sample", "presquash")


@dataclass
class BatchTargets:
    """Detached bootstrap targets for one minibatch."""

    y_r: np.ndarray
    y_e: np.ndarray


class CriticPair:
    """Twin reward critics plus one entropy critic, with target copies."""

    def __init__(self, state_dim: int, action_dim: int, hidden, rng: np.random.Generator,
                 activation: str = "tanh"):
        in_dim = state_dim + action_dim
        self.qr_store = ParamStore()
        self.q_r_a = Mlp(self.qr_store, "q_r_a", in_dim, hidden, 1, rng, activation)
        self.q_r_b = Mlp(self.qr_store, "q_r_b", in_dim, hidden, 1, rng, activation)
        self.qe_store = ParamStore()
        self.q_e = Mlp(self.qe_store, "q_e", in_dim, hidden, 1, rng, activation)
        self.qr_target_store = ParamStore()
        self.q_r_a_target = Mlp(self.qr_target_store, "q_r_a", in_dim, hidden, 1, rng, activation)
        self.q_r_b_target = Mlp(self.qr_target_store, "q_r_b", in_dim, hidden, 1, rng, activation)
        self.qe_target_store = ParamStore()
        self.q_e_target = Mlp(self.qe_target_store, "q_e", in_dim, hidden, 1, rng, activation)
        self.qr_target_store.copy_values_from(self.qr_store)
        self.qe_target_store.copy_values_from(self.qe_store)

    @staticmethod
    def _join(states, actions) -> np.ndarray:
        return np.concatenate([np.atleast_2d(states), np.atleast_2d(actions)], axis=1)

    def q_r_values_np(self, states, actions, target: bool = False) -> tuple[np.ndarray, np.ndarray]:
        sa = self._join(states, actions)
        a = self.q_r_a_target if target else self.q_r_a
        b = self.q_r_b_target if target else self.q_r_b
        return a.forward_np(sa)[:, 0], b.forward_np(sa)[:, 0]

    def q_r_min_np(self, states, actions, target: bool = False) -> np.ndarray:
        qa, qb = self.q_r_values_np(states, actions, target)
        return np.minimum(qa, qb)

    def q_e_np(self, states, actions, target: bool = False) -> np.ndarray:
        net = self.q_e_target if target else self.q_e
        return net.forward_np(self._join(states, actions))[:, 0]

    def polyak(self, tau: float) -> None:
        polyak_update(self.qr_target_store, self.qr_store, tau)
        polyak_update(self.qe_target_store, self.qe_store, tau)


def _next_entropy(sample, estimator: str) -> np.ndarray:
    if estimator == "sample":
        return -sample.log_prob
    if estimator == "presquash":
        return sample.pre_squash_entropy
    raise ValueError(f"unknown entropy estimator {estimator!r}; choose from {ENTROPY_ESTIMATORS}")


def pev_target(batch, policy, critics: CriticPair, gamma: float,
               rng: np.random.Generator = None, next_sample=None) -> np.ndarray:
    """Reward-only bootstrap: y_r = r + gamma * (1 - done) * min-twin target.

    The next action is freshly sampled from the current policy (pass
    ``next_sample`` to share one draw with the entropy target). No entropy
    and no temperature enter here.
    """
    if next_sample is None:
        next_sample = policy.sample(batch.next_states, rng)
    q_next = critics.q_r_min_np(batch.next_states, next_sample.action, target=True)
    y = batch.rewards + gamma * (1.0 - batch.dones) * q_next
    if not np.all(np.isfinite(y)):
        raise ValueError("nonfinite reward-critic target")
    return y


def pis_target(batch, policy, critics: CriticPair, gamma: float,
               rng: np.random.Generator = None, next_sample=None,
               estimator: str = "sample") -> np.ndarray:
    """Entropy bootstrap: y_e = (1 - done) * gamma * (h(s') + Q_e_target(s', a')).

    h(s') is the single-sample -log pi(a'|s') drawn jointly with a' (or the
    closed-form pre-squash entropy under the ``presquash`` estimator). No
    reward and no temperature enter here.
    """
    if next_sample is None:
        next_sample = policy.sample(batch.next_states, rng)
    h_next = _next_entropy(next_sample, estimator)
    q_next = critics.q_e_np(batch.next_states, next_sample.action, target=True)
    y = (1.0 - batch.dones) * gamma * (h_next + q_next)
    if not np.all(np.isfinite(y)):
        raise ValueError("nonfinite entropy-critic target")
    return y


def batch_targets(batch, policy, critics: CriticPair, gamma: float,
                  rng: np.random.Generator, estimator: str = "sample") -> BatchTargets:
    """Both targets from one shared next-state action draw."""
    next_sample = policy.sample(batch.next_states, rng)
    return BatchTargets(
        y_r=pev_target(batch, policy, critics, gamma, next_sample=next_sample),
        y_e=pis_target(batch, policy, critics, gamma, next_sample=next_sample,
                       estimator=estimator),
    )


def twin_mse_loss(net_a: Mlp, net_b: Mlp, states, actions, y: np.ndarray) -> float:
    """Batch MSE against a detached target, summed over two twins;
    gradients accumulate into the twins' store."""
    tape = Tape()
    sa = CriticPair._join(states, actions)
    qa = net_a.forward(sa, tape).reshape((-1,))
    qb = net_b.forward(sa, tape).reshape((-1,))
    loss = (qa - y).square().mean() + (qb - y).square().mean()
    loss.backward()
    return float(loss.value)


def pev_loss(batch, critics: CriticPair, y_r: np.ndarray) -> float:
    """Mean squared error summed over both twins; gradients land in the
    online reward-critic store (caller zeroes and steps)."""
    return twin_mse_loss(critics.q_r_a, critics.q_r_b, batch.states, batch.actions, y_r)


def pis_loss(batch, critics: CriticPair, y_e: np.ndarray) -> float:
    """Mean squared error of the single entropy critic."""
    tape = Tape()
    sa = critics._join(batch.states, batch.actions)
    q = critics.q_e.forward(sa, tape).reshape((-1,))
    loss = (q - y_e).square().mean()
    loss.backward()
    return float(loss.value)


def cumulative_entropy_estimate(critics: CriticPair, policy, states: np.ndarray,
                                rng: np.random.Generator, estimator: str = "sample") -> np.ndarray:
    """Per-state discounted cumulative-entropy estimate: h(s) + Q_e(s, a),
    with a freshly sampled and h its single-sample entropy."""
    sample = policy.sample(states, rng)
    return _next_entropy(sample, estimator) + critics.q_e_np(states, sample.action)
