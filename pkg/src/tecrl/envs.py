"""Desk-scale environments plus the tabular MDP description used for exact solves.

All environments share one contract: ``reset(seed)`` starts an episode
deterministically, ``step(action)`` returns a ``Transition`` whose ``done``
flag marks genuine terminal states only. Hitting the step limit sets the
separate ``truncated`` flag; the two are mutually exclusive, and learners
bootstrap through truncations. Out-of-range actions are clamped and counted
rather than rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EnvSpec",
    "Transition",
    "MdpSpec",
    "PendulumEnv",
    "PointMassEnv",
    "ChainEnv",
    "RandomTabularEnv",
    "make_env",
    "random_mdp_spec",
    "ENV_NAMES",
]


@dataclass(frozen=True)
class EnvSpec:
    state_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    max_episode_steps: int
    discrete: bool

    def __post_init__(self):
        object.__setattr__(self, "action_low", np.asarray(self.action_low, dtype=np.float64))
        object.__setattr__(self, "action_high", np.asarray(self.action_high, dtype=np.float64))
        if self.state_dim < 1 or self.action_dim < 1:
            raise ValueError("state_dim and action_dim must be positive")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")
        if not np.all(self.action_low < self.action_high):
            raise ValueError("action_low must be elementwise below action_high")


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    truncated: bool = False

    def __post_init__(self):
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")
        if self.done and self.truncated:
            raise ValueError("done and truncated are mutually exclusive")


@dataclass
class MdpSpec:
    """Tabular MDP: P[s, a, s'] transition tensor, R[s, a] rewards."""

    n_states: int
    n_actions: int
    P: np.ndarray
    R: np.ndarray
    gamma: float
    terminal_mask: np.ndarray = None
    start: np.ndarray = None

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        self.R = np.asarray(self.R, dtype=np.float64)
        if self.terminal_mask is None:
            self.terminal_mask = np.zeros(self.n_states, dtype=bool)
        self.terminal_mask = np.asarray(self.terminal_mask, dtype=bool)
        if self.P.shape != (self.n_states, self.n_actions, self.n_states):
            raise ValueError(f"P must have shape (S, A, S), got {self.P.shape}")
        if self.R.shape != (self.n_states, self.n_actions):
            raise ValueError(f"R must have shape (S, A), got {self.R.shape}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if np.any(self.P < 0.0):
            raise ValueError("transition probabilities must be nonnegative")
        row_sums = self.P.sum(axis=2)
        if np.max(np.abs(row_sums - 1.0)) > 1e-12:
            raise ValueError("each P[s, a] row must sum to 1 within 1e-12")
        if self.start is not None:
            self.start = np.asarray(self.start, dtype=np.float64)
            if self.start.shape != (self.n_states,) or abs(self.start.sum() - 1.0) > 1e-12:
                raise ValueError("start must be a length-S distribution")

    def start_distribution(self) -> np.ndarray:
        """Supplied start distribution or uniform over non-terminal states."""
        if self.start is not None:
            return self.start
        live = ~self.terminal_mask
        return live / live.sum()


class _Env:
    """Single-owner mutable episode state shared by all environments."""

    spec: EnvSpec

    def __init__(self):
        self._steps = 0
        self._live = False
        self.clamp_count = 0

    def reset(self, seed: int) -> np.ndarray:
        self._rng = np.random.default_rng(seed)
        self._steps = 0
        self._live = True
        return self._reset_state()

    def step(self, action) -> Transition:
        if not self._live:
            raise RuntimeError("step called on a finished episode; call reset first")
        action = np.asarray(action, dtype=np.float64).reshape(self.spec.action_dim)
        clipped = np.clip(action, self.spec.action_low, self.spec.action_high)
        if np.any(clipped != action):
            self.clamp_count += 1
        state = self._observe()
        reward, done = self._advance(clipped)
        self._steps += 1
        truncated = (not done) and self._steps >= self.spec.max_episode_steps
        if done or truncated:
            self._live = False
        return Transition(state, clipped, float(reward), self._observe(), done, truncated)

    # subclass hooks
    def _reset_state(self) -> np.ndarray:
        raise NotImplementedError

    def _observe(self) -> np.ndarray:
        raise NotImplementedError

    def _advance(self, action: np.ndarray) -> tuple[float, bool]:
        raise NotImplementedError


class PendulumEnv(_Env):
    """Torque-limited rigid pendulum; the goal is to hold the pole upright.

    State is (cos th, sin th, thdot); angle zero is upright. Semi-implicit
    Euler with dt = 0.05, gravity 10, unit mass and length, torque bound 2,
    angular velocity clipped to +-8. Cost is th^2 + 0.1 thdot^2 + 0.001 u^2
    with the angle wrapped to (-pi, pi]. Episodes never terminate; they
    truncate at 200 steps.
    """

    GRAVITY = 10.0
    MASS = 1.0
    LENGTH = 1.0
    DT = 0.05
    MAX_SPEED = 8.0

    def __init__(self, max_episode_steps: int = 200):
        super().__init__()
        self.spec = EnvSpec(3, 1, [-2.0], [2.0], max_episode_steps, discrete=False)

    def _reset_state(self):
        self._theta = self._rng.uniform(-np.pi, np.pi)
        self._theta_dot = self._rng.uniform(-1.0, 1.0)
        return self._observe()

    def _observe(self):
        return np.array([np.cos(self._theta), np.sin(self._theta), self._theta_dot])

    def _advance(self, action):
        u = float(action[0])
        angle = _wrap_angle(self._theta)
        cost = angle**2 + 0.1 * self._theta_dot**2 + 0.001 * u**2
        accel = (3.0 * self.GRAVITY / (2.0 * self.LENGTH) * np.sin(self._theta)
                 + 3.0 / (self.MASS * self.LENGTH**2) * u)
        self._theta_dot = np.clip(self._theta_dot + accel * self.DT, -self.MAX_SPEED, self.MAX_SPEED)
        self._theta = self._theta + self._theta_dot * self.DT
        return -cost, False


def _wrap_angle(theta: float) -> float:
    return (theta + np.pi) % (2.0 * np.pi) - np.pi


class PointMassEnv(_Env):
    """2-D double integrator driven toward the origin.

    State is (px, py, vx, vy); the action is an acceleration in [-1, 1]^2
    integrated with dt = 0.1. Reward is -(distance to origin) - 0.01 |u|^2.
    Starts rest at a uniform position in [-0.5, 0.5]^2; 100-step episodes,
    truncation only.
    """

    DT = 0.1

    def __init__(self, max_episode_steps: int = 100):
        super().__init__()
        self.spec = EnvSpec(4, 2, [-1.0, -1.0], [1.0, 1.0], max_episode_steps, discrete=False)

    def _reset_state(self):
        self._pos = self._rng.uniform(-0.5, 0.5, size=2)
        self._vel = np.zeros(2)
        return self._observe()

    def _observe(self):
        return np.concatenate([self._pos, self._vel])

    def _advance(self, action):
        reward = -(np.linalg.norm(self._pos) + 0.01 * float(action @ action))
        self._vel = self._vel + self.DT * action
        self._pos = self._pos + self.DT * self._vel
        return reward, False


class ChainEnv(_Env):
    """Deterministic N-state chain with a single distal reward.

    States are one-hot; the scalar action in [-1, 1] moves left when
    negative, right otherwise. Reaching the last state pays 1 and ends the
    episode (a genuine terminal). Everything else pays 0, so sustained
    exploration is required to ever see reward.
    """

    def __init__(self, n_states: int = 9, max_episode_steps: int = None):
        super().__init__()
        if n_states < 3:
            raise ValueError("chain needs at least 3 states")
        self.n_states = n_states
        if max_episode_steps is None:
            max_episode_steps = 4 * n_states
        self.spec = EnvSpec(n_states, 1, [-1.0], [1.0], max_episode_steps, discrete=True)

    def _reset_state(self):
        self._state = 0
        return self._observe()

    def _observe(self):
        obs = np.zeros(self.n_states)
        obs[self._state] = 1.0
        return obs

    def _advance(self, action):
        move_right = float(action[0]) >= 0.0
        self._state = min(self._state + 1, self.n_states - 1) if move_right else max(self._state - 1, 0)
        if self._state == self.n_states - 1:
            return 1.0, True
        return 0.0, False

    def mdp_spec(self, gamma: float = 0.99) -> MdpSpec:
        """Exact two-action tabular counterpart (action 0 left, 1 right)."""
        n = self.n_states
        P = np.zeros((n, 2, n))
        R = np.zeros((n, 2))
        terminal = np.zeros(n, dtype=bool)
        terminal[n - 1] = True
        for s in range(n):
            P[s, 0, max(s - 1, 0)] = 1.0
            P[s, 1, min(s + 1, n - 1)] = 1.0
        R[n - 2, 1] = 1.0
        P[n - 1, :, :] = 0.0
        P[n - 1, :, n - 1] = 1.0
        start = np.zeros(n)
        start[0] = 1.0
        return MdpSpec(n, 2, P, R, gamma, terminal_mask=terminal, start=start)


def random_mdp_spec(n_states: int, n_actions: int, gamma: float,
                    rng: np.random.Generator) -> MdpSpec:
    """Dense random MDP: Dirichlet(1) transition rows, rewards uniform in [-1, 1]."""
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    return MdpSpec(n_states, n_actions, P, R, gamma)


class RandomTabularEnv(_Env):
    """Step-interface view of a random tabular MDP.

    Observations are one-hot states; the scalar action in [-1, 1] is binned
    uniformly into the MDP's discrete actions. The generating MdpSpec is
    exposed as ``.mdp`` for exact cross-checks.
    """

    def __init__(self, n_states: int = 5, n_actions: int = 3, seed: int = 0,
                 gamma: float = 0.99, max_episode_steps: int = 100):
        super().__init__()
        self.mdp = random_mdp_spec(n_states, n_actions, gamma, np.random.default_rng(seed))
        self.n_states = n_states
        self.n_actions = n_actions
        self.spec = EnvSpec(n_states, 1, [-1.0], [1.0], max_episode_steps, discrete=True)

    def _reset_state(self):
        self._state = int(self._rng.choice(self.n_states, p=self.mdp.start_distribution()))
        return self._observe()

    def _observe(self):
        obs = np.zeros(self.n_states)
        obs[self._state] = 1.0
        return obs

    def _advance(self, action):
        a = int(np.clip((float(action[0]) + 1.0) / 2.0 * self.n_actions, 0, self.n_actions - 1))
        reward = self.mdp.R[self._state, a]
        self._state = int(self._rng.choice(self.n_states, p=self.mdp.P[self._state, a]))
        return reward, bool(self.mdp.terminal_mask[self._state])


_FACTORIES = {
    "pendulum": PendulumEnv,
    "point-mass": PointMassEnv,
    "chain": ChainEnv,
    "random-tabular": RandomTabularEnv,
}

ENV_NAMES = tuple(sorted(_FACTORIES))


def make_env(name: str, **overrides):
    """Build a named environment; overrides feed the constructor."""
    if name not in _FACTORIES:
        raise ValueError(f"unknown environment {name!r}; valid names: {', '.join(ENV_NAMES)}")
    return _FACTORIES[name](**overrides)
