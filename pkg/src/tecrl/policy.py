"""Squashed diagonal-Gaussian stochastic policy.

Actions are produced by reparameterized sampling: u = mu + sigma * eps,
then a = center + scale * tanh(u). Log-densities include the exact tanh
Jacobian correction, computed in its cancellation-free form, so sampled
-log pi values are unbiased single-sample entropy estimates. A non-squashed
diagnostic mode (``squash=False``) exposes the raw Gaussian, mainly for
closed-form checks; it does not enforce action bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Mlp, ParamStore, Tape, Var, softplus

__all__ = ["GaussianPolicyHead", "ActionSample", "LOG_STD_MIN", "LOG_STD_MAX"]

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG_2 = math.log(2.0)


def _log1m_tanh2(u: np.ndarray) -> np.ndarray:
    """log(1 - tanh(u)^2) without cancellation."""
    return 2.0 * (_LOG_2 - u - np.logaddexp(0.0, -2.0 * u))


@dataclass
class ActionSample:
    """One batch of sampled actions with their exact log-densities."""

    action: np.ndarray            # (B, A), within bounds when squashing
    log_prob: np.ndarray          # (B,)
    pre_squash_entropy: np.ndarray  # (B,), closed-form Gaussian entropy

    def __post_init__(self):
        if not np.all(np.isfinite(self.log_prob)):
            raise ValueError("log_prob must be finite")


class GaussianPolicyHead:
    """MLP trunk emitting per-dimension mean and log-std of a Gaussian."""

    def __init__(self, store: ParamStore, state_dim: int, action_dim: int, hidden,
                 action_low, action_high, rng: np.random.Generator,
                 activation: str = "tanh", squash: bool = True, name: str = "policy"):
        self.action_dim = action_dim
        self.squash = squash
        self.net = Mlp(store, name, state_dim, hidden, 2 * action_dim, rng, activation)
        low = np.asarray(action_low, dtype=np.float64)
        high = np.asarray(action_high, dtype=np.float64)
        self.center = (high + low) / 2.0
        self.scale = (high - low) / 2.0
        self._log_scale = np.log(self.scale)

    # -- numpy paths

    def _heads_np(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out = self.net.forward_np(np.atleast_2d(states))
        if not np.all(np.isfinite(out)):
            raise ValueError("policy trunk produced nonfinite output")
        mu = out[:, : self.action_dim]
        log_std = np.clip(out[:, self.action_dim :], LOG_STD_MIN, LOG_STD_MAX)
        return mu, log_std

    def sample(self, states: np.ndarray, rng: np.random.Generator) -> ActionSample:
        states = np.atleast_2d(states)
        eps = rng.standard_normal((states.shape[0], self.action_dim))
        return self.sample_with_noise(states, eps)

    def sample_with_noise(self, states: np.ndarray, eps: np.ndarray) -> ActionSample:
        mu, log_std = self._heads_np(np.atleast_2d(states))
        eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), mu.shape)
        std = np.exp(log_std)
        u = mu + std * eps
        gauss = -(_HALF_LOG_2PI + log_std + 0.5 * eps * eps)
        entropy = (0.5 + _HALF_LOG_2PI + log_std).sum(axis=1)
        if self.squash:
            action = self.center + self.scale * np.tanh(u)
            log_prob = (gauss - self._log_scale - _log1m_tanh2(u)).sum(axis=1)
        else:
            action = u
            log_prob = gauss.sum(axis=1)
        return ActionSample(action, log_prob, entropy)

    def deterministic_action(self, states: np.ndarray) -> np.ndarray:
        """Squashed mean; equals sampling with the noise forced to zero."""
        return self.sample_with_noise(states, 0.0).action

    def log_prob_of(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Exact log-density of given actions (diagnostics, density checks)."""
        mu, log_std = self._heads_np(np.atleast_2d(states))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        std = np.exp(log_std)
        if self.squash:
            raw = np.clip((actions - self.center) / self.scale, -1.0 + 1e-12, 1.0 - 1e-12)
            u = np.arctanh(raw)
            correction = (self._log_scale + _log1m_tanh2(u)).sum(axis=1)
        else:
            u = actions
            correction = 0.0
        z = (u - mu) / std
        gauss = -(_HALF_LOG_2PI + log_std + 0.5 * z * z).sum(axis=1)
        return gauss - correction

    def step_entropy_estimate(self, states: np.ndarray, rng: np.random.Generator,
                              n_samples: int = 1) -> float:
        """Monte-Carlo single-step entropy: average of -log pi over fresh draws."""
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        total = 0.0
        for _ in range(n_samples):
            total += float(np.mean(-self.sample(states, rng).log_prob))
        return total / n_samples

    # -- taped path for policy-gradient losses

    def rsample(self, states: np.ndarray, eps: np.ndarray, tape: Tape) -> tuple[Var, Var]:
        """Reparameterized taped sample: (action, log_prob) with gradients
        flowing into the trunk through both the action and the density."""
        states = np.atleast_2d(states)
        out = self.net.forward(states, tape)
        if not np.all(np.isfinite(out.value)):
            raise ValueError("policy trunk produced nonfinite output")
        mu = out.slice_cols(0, self.action_dim)
        log_std = out.slice_cols(self.action_dim, 2 * self.action_dim).clip(LOG_STD_MIN, LOG_STD_MAX)
        eps = np.asarray(eps, dtype=np.float64)
        u = mu + log_std.exp() * eps
        # the reparameterized Gaussian quadratic term is constant in the
        # parameters, so only -log_std carries density gradient
        gauss = -(log_std + (_HALF_LOG_2PI + 0.5 * eps * eps))
        if self.squash:
            action = u.tanh() * self.scale + self.center
            jac = (u + softplus(u * -2.0) - _LOG_2) * -2.0
            log_prob = (gauss - (jac + self._log_scale)).sum(axis=1)
        else:
            action = u
            log_prob = gauss.sum(axis=1)
        return action, log_prob
