"""Single-step max-entropy baseline (soft critics, local temperature tuning).

The structural contrast with the decoupled agent is deliberate: here the
temperature-weighted entropy bonus sits inside the critic target, so any
temperature change immediately shifts what the critics are regressing
toward, and the temperature itself chases a per-step entropy target rather
than a trajectory budget. Policy, networks, buffer and scheduling are all
shared so comparisons isolate exactly that difference.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Mlp, ParamStore, Tape, adam_step, concat, minimum, polyak_update
from .buffer import Batch
from .critics import CriticPair, twin_mse_loss
from .agents import AgentConfig, PimAux, Temperature, _OffPolicyAgent
from .policy import GaussianPolicyHead

__all__ = [
    "SoftCriticPair",
    "soft_pev_target",
    "soft_pev_loss",
    "soft_pim_loss",
    "local_tup_step",
    "MaxEntAgent",
]


class SoftCriticPair:
    """Twin soft critics with target copies."""

    def __init__(self, state_dim: int, action_dim: int, hidden, rng: np.random.Generator,
                 activation: str = "tanh"):
        in_dim = state_dim + action_dim
        self.store = ParamStore()
        self.q_a = Mlp(self.store, "q_soft_a", in_dim, hidden, 1, rng, activation)
        self.q_b = Mlp(self.store, "q_soft_b", in_dim, hidden, 1, rng, activation)
        self.target_store = ParamStore()
        self.q_a_target = Mlp(self.target_store, "q_soft_a", in_dim, hidden, 1, rng, activation)
        self.q_b_target = Mlp(self.target_store, "q_soft_b", in_dim, hidden, 1, rng, activation)
        self.target_store.copy_values_from(self.store)

    def q_min_np(self, states, actions, target: bool = False) -> np.ndarray:
        sa = CriticPair._join(states, actions)
        a = self.q_a_target if target else self.q_a
        b = self.q_b_target if target else self.q_b
        return np.minimum(a.forward_np(sa)[:, 0], b.forward_np(sa)[:, 0])

    def polyak(self, tau: float) -> None:
        polyak_update(self.target_store, self.store, tau)


def soft_pev_target(batch, policy, critics: SoftCriticPair, alpha: float, gamma: float,
                    rng: np.random.Generator = None, next_sample=None) -> np.ndarray:
    """Entropy-augmented bootstrap:
    y = r + gamma * (1 - done) * (min-twin target - alpha * log pi(a'|s')).

    Unlike the decoupled targets, this value moves whenever alpha does.
    """
    if next_sample is None:
        next_sample = policy.sample(batch.next_states, rng)
    q_next = critics.q_min_np(batch.next_states, next_sample.action, target=True)
    y = batch.rewards + gamma * (1.0 - batch.dones) * (q_next - alpha * next_sample.log_prob)
    if not np.all(np.isfinite(y)):
        raise ValueError("nonfinite soft critic target")
    return y


def soft_pev_loss(batch, critics: SoftCriticPair, y: np.ndarray) -> float:
    return twin_mse_loss(critics.q_a, critics.q_b, batch.states, batch.actions, y)


def soft_pim_loss(policy: GaussianPolicyHead, critics: SoftCriticPair, alpha: float,
                  states: np.ndarray, eps: np.ndarray) -> tuple[float, PimAux]:
    """Policy objective: min-twin soft Q - alpha * log pi, negated."""
    tape = Tape()
    action, log_prob = policy.rsample(states, eps, tape)
    sa = concat(states, action, tape)
    qa = critics.q_a.forward(sa, tape, frozen=True)
    qb = critics.q_b.forward(sa, tape, frozen=True)
    q_min = minimum(qa, qb).reshape((-1,))
    objective = q_min - log_prob * alpha
    loss = -objective.mean()
    loss.backward()
    return float(loss.value), PimAux(h_cum=-log_prob.value, log_probs=log_prob.value.copy(),
                                     mean_q=float(q_min.value.mean()))


def local_tup_step(temperature: Temperature, log_probs: np.ndarray, h0: float) -> float:
    """Per-step entropy tuning: d(loss)/d(alpha) = (step entropy - h0),
    so entropy above the target shrinks alpha. Returns the pre-update loss."""
    gap = float(np.mean(-log_probs)) - h0
    loss = temperature.alpha * gap
    temperature.apply_log_gradient(temperature.alpha * gap)
    return loss


class MaxEntAgent(_OffPolicyAgent):
    """Baseline agent; selected by ``algo = maxent``."""

    def __init__(self, env_spec, config: AgentConfig, streams: dict):
        super().__init__(env_spec, config, streams)
        self.critics = SoftCriticPair(env_spec.state_dim, env_spec.action_dim,
                                      config.hidden, streams["critic_init"],
                                      activation=config.activation)
        self.h0 = -float(env_spec.action_dim)

    def _update(self, batch: Batch, update_policy: bool) -> dict:
        cfg = self.config
        next_sample = self.policy.sample(batch.next_states, self.rng_noise)
        y = soft_pev_target(batch.scaled_rewards(cfg.reward_scale), self.policy, self.critics,
                            self.temperature.alpha, cfg.gamma, next_sample=next_sample)
        self.critics.store.zero_grad()
        losses = {"pev": soft_pev_loss(batch, self.critics, y)}
        adam_step(self.critics.store, cfg.critic_lr)
        self.critics.polyak(cfg.tau)
        if update_policy:
            eps = self.rng_noise.standard_normal((len(batch.states), self.env_spec.action_dim))
            self.policy_store.zero_grad()
            losses["pim"], aux = soft_pim_loss(self.policy, self.critics,
                                               self.temperature.alpha, batch.states, eps)
            adam_step(self.policy_store, cfg.actor_lr)
            self.entropy_signal = float(np.mean(-aux.log_probs))
            if cfg.tup_enabled:
                losses["tup"] = local_tup_step(self.temperature, aux.log_probs, self.h0)
        return losses
