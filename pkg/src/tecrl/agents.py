"""Trajectory-entropy-constrained actor-critic agent and its update rules.

One training iteration collects an environment step, then (once the buffer
is warm) runs both critic regressions every iteration and the policy and
temperature updates every ``policy_update_interval`` iterations, counting
from zero. Critic updates never read the temperature, so its adjustment
cannot perturb their targets.

The temperature moves the mean cumulative-entropy estimate toward the
trajectory budget rho * h0 / (1 - gamma): entropy above budget lowers the
temperature, below raises it. The printed form of the temperature loss has
the opposite, self-amplifying gradient; it is kept available behind
``tup_literal_sign`` for side-by-side study but is not the default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParamStore, Tape, adam_step, concat, minimum
from .buffer import Batch, ReplayBuffer
from .critics import ENTROPY_ESTIMATORS, CriticPair, pev_loss, pev_target, pis_loss, pis_target
from .policy import GaussianPolicyHead

__all__ = [
    "AgentConfig",
    "EntropyBudget",
    "Temperature",
    "budget_from_config",
    "pim_loss",
    "tup_step",
    "PimAux",
    "TecrlAgent",
]

ALGORITHMS = ("tecrl", "maxent")


@dataclass
class AgentConfig:
    """Flat training configuration; names mirror the config-file keys."""

    env: str = "pendulum"
    algo: str = "tecrl"
    seed: int = 0
    gamma: float = 0.99
    tau: float = 0.005
    actor_lr: float = 1e-4
    critic_lr: float = 1e-4
    alpha_lr: float = 3e-4
    init_alpha: float = 0.2
    batch: int = 256
    buffer: int = 1_000_000
    warm: int = 10_000
    policy_update_interval: int = 2
    reward_scale: float = 0.1
    rho: float = 1.0
    total_iterations: int = 200_000
    eval_interval: int = 2_000
    eval_episodes: int = 10
    steps_per_iteration: int = 1
    hidden: tuple = (64, 64)
    activation: str = "tanh"
    entropy_estimator: str = "sample"
    tup_enabled: bool = True
    tup_literal_sign: bool = False
    # reserved for distributional-critic variants; unused by this codebase
    zeta: float = 3.0
    eps_stab: float = 0.1
    env_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.algo not in ALGORITHMS:
            raise ValueError(f"algo must be one of {ALGORITHMS}, got {self.algo!r}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        positive = ("actor_lr", "critic_lr", "alpha_lr", "init_alpha", "batch", "buffer",
                    "policy_update_interval", "reward_scale", "rho", "eval_interval",
                    "eval_episodes", "steps_per_iteration")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.warm < 0 or self.total_iterations < 0:
            raise ValueError("warm and total_iterations must be nonnegative")
        if self.buffer < self.batch:
            raise ValueError("buffer capacity must be at least the batch size")
        if self.entropy_estimator not in ENTROPY_ESTIMATORS:
            raise ValueError(f"entropy_estimator must be one of {ENTROPY_ESTIMATORS}")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError("hidden must be a nonempty tuple of positive widths")


@dataclass
class EntropyBudget:
    """Trajectory-entropy budget rho * h0 / (1 - gamma)."""

    rho: float
    h0: float
    gamma: float

    @property
    def budget(self) -> float:
        return self.rho * self.h0 / (1.0 - self.gamma)


def budget_from_config(rho: float, action_dim: int, gamma: float) -> EntropyBudget:
    """Budget with the conventional per-step base target h0 = -action_dim."""
    if rho <= 0.0:
        raise ValueError(f"rho must be positive, got {rho}")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    return EntropyBudget(rho=rho, h0=-float(action_dim), gamma=gamma)


class Temperature:
    """Entropy temperature optimized in log space, so it stays positive."""

    def __init__(self, init_alpha: float = 0.2, lr: float = 3e-4):
        if init_alpha <= 0.0:
            raise ValueError("init_alpha must be positive")
        self._store = ParamStore()
        self._log_alpha = self._store.create("log_alpha", np.array(math.log(init_alpha)))
        self.lr = lr

    @property
    def alpha(self) -> float:
        return float(np.exp(self._log_alpha.value))

    @property
    def log_alpha(self) -> float:
        return float(self._log_alpha.value)

    def apply_log_gradient(self, grad: float) -> None:
        """One Adam step on log alpha given d(loss)/d(log alpha)."""
        self._store.zero_grad()
        self._log_alpha.grad[...] = grad
        adam_step(self._store, self.lr)


@dataclass
class PimAux:
    """Detached per-sample quantities from a policy update."""

    h_cum: np.ndarray      # -log pi(a|s) + Q_e(s, a)
    log_probs: np.ndarray
    mean_q: float


def pim_loss(policy: GaussianPolicyHead, critics: CriticPair, alpha: float,
             states: np.ndarray, eps: np.ndarray) -> tuple[float, PimAux]:
    """Policy objective: min-twin Q_r + alpha * (-log pi + Q_e), negated.

    Critic parameters are frozen; gradients reach the policy through the
    reparameterized action and the log-density. The temperature enters as a
    constant. Gradients land in the policy store (caller zeroes and steps).
    """
    tape = Tape()
    action, log_prob = policy.rsample(states, eps, tape)
    sa = concat(states, action, tape)
    qa = critics.q_r_a.forward(sa, tape, frozen=True)
    qb = critics.q_r_b.forward(sa, tape, frozen=True)
    q_min = minimum(qa, qb).reshape((-1,))
    q_e = critics.q_e.forward(sa, tape, frozen=True).reshape((-1,))
    objective = q_min + (q_e - log_prob) * alpha
    loss = -objective.mean()
    loss.backward()
    h_cum = q_e.value - log_prob.value
    return float(loss.value), PimAux(h_cum=h_cum, log_probs=log_prob.value.copy(),
                                     mean_q=float(q_min.value.mean()))


def tup_step(temperature: Temperature, h_cum: np.ndarray, budget: float,
             literal_sign: bool = False) -> float:
    """Move the temperature so cumulative entropy tracks the budget.

    The batch estimate is averaged first, then d(loss)/d(log alpha) =
    alpha * (mean - budget): entropy above budget shrinks alpha. With
    ``literal_sign`` the gradient is negated (the printed, self-amplifying
    form). Returns the loss at the pre-update temperature.
    """
    gap = float(np.mean(h_cum)) - budget
    sign = -1.0 if literal_sign else 1.0
    loss = sign * temperature.alpha * gap
    temperature.apply_log_gradient(sign * temperature.alpha * gap)
    return loss


class _OffPolicyAgent:
    """Shared collection and update scheduling."""

    def __init__(self, env_spec, config: AgentConfig, streams: dict):
        self.config = config
        self.env_spec = env_spec
        self.rng_env = streams["env"]
        self.rng_noise = streams["noise"]
        self.rng_buffer = streams["buffer"]
        self.policy_store = ParamStore()
        self.policy = GaussianPolicyHead(
            self.policy_store, env_spec.state_dim, env_spec.action_dim, config.hidden,
            env_spec.action_low, env_spec.action_high, streams["policy_init"],
            activation=config.activation,
        )
        self.temperature = Temperature(config.init_alpha, config.alpha_lr)
        self.iteration = 0
        self._state = None
        self.entropy_signal = math.nan
        self.last_losses = {"pev": math.nan, "pis": math.nan,
                            "pim": math.nan, "tup": math.nan}

    def make_buffer(self) -> ReplayBuffer:
        return ReplayBuffer(self.config.buffer, self.env_spec.state_dim,
                            self.env_spec.action_dim, warm_size=self.config.warm)

    def _collect_step(self, env, buffer: ReplayBuffer) -> None:
        if self._state is None:
            self._state = env.reset(int(self.rng_env.integers(2**63 - 1)))
        sample = self.policy.sample(self._state[None, :], self.rng_noise)
        tr = env.step(sample.action[0])
        buffer.push(tr)
        self._state = None if (tr.done or tr.truncated) else tr.next_state

    def train_iteration(self, env, buffer: ReplayBuffer) -> dict:
        """One collection step plus the scheduled gradient updates.

        Below the warm size the gradient phase is skipped entirely; the
        policy/temperature phase runs when the iteration index (counted
        from zero) is a multiple of the update interval.
        """
        cfg = self.config
        for _ in range(cfg.steps_per_iteration):
            self._collect_step(env, buffer)
        losses = {}
        if buffer.size >= max(cfg.warm, cfg.batch):
            batch = buffer.sample(cfg.batch, self.rng_buffer)
            update_policy = self.iteration % cfg.policy_update_interval == 0
            losses = self._update(batch, update_policy)
            self.last_losses.update(losses)
        self.iteration += 1
        return losses

    def _update(self, batch: Batch, update_policy: bool) -> dict:
        raise NotImplementedError


class TecrlAgent(_OffPolicyAgent):
    """Decoupled-critic agent under a trajectory-entropy budget."""

    def __init__(self, env_spec, config: AgentConfig, streams: dict):
        super().__init__(env_spec, config, streams)
        self.critics = CriticPair(env_spec.state_dim, env_spec.action_dim,
                                  config.hidden, streams["critic_init"],
                                  activation=config.activation)
        self.budget = budget_from_config(config.rho, env_spec.action_dim, config.gamma)

    def _update(self, batch: Batch, update_policy: bool) -> dict:
        cfg = self.config
        next_sample = self.policy.sample(batch.next_states, self.rng_noise)
        y_r = pev_target(batch.scaled_rewards(cfg.reward_scale), self.policy, self.critics,
                         cfg.gamma, next_sample=next_sample)
        y_e = pis_target(batch, self.policy, self.critics, cfg.gamma,
                         next_sample=next_sample, estimator=cfg.entropy_estimator)
        self.critics.qr_store.zero_grad()
        losses = {"pev": pev_loss(batch, self.critics, y_r)}
        adam_step(self.critics.qr_store, cfg.critic_lr)
        self.critics.qe_store.zero_grad()
        losses["pis"] = pis_loss(batch, self.critics, y_e)
        adam_step(self.critics.qe_store, cfg.critic_lr)
        self.critics.polyak(cfg.tau)
        if update_policy:
            eps = self.rng_noise.standard_normal((len(batch.states), self.env_spec.action_dim))
            self.policy_store.zero_grad()
            losses["pim"], aux = pim_loss(self.policy, self.critics,
                                          self.temperature.alpha, batch.states, eps)
            adam_step(self.policy_store, cfg.actor_lr)
            self.entropy_signal = float(np.mean(aux.h_cum))
            if cfg.tup_enabled:
                losses["tup"] = tup_step(self.temperature, aux.h_cum,
                                         self.budget.budget, cfg.tup_literal_sign)
        return losses
