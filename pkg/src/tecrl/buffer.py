"""Uniform-sampling ring replay buffer over preallocated arrays."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .envs import Transition

__all__ = ["Batch", "ReplayBuffer"]


@dataclass
class Batch:
    """Minibatch of transitions as flat float64 arrays; dones are 0/1."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def scaled_rewards(self, scale: float) -> "Batch":
        return replace(self, rewards=self.rewards * scale)


class ReplayBuffer:
    """Ring storage; pushes overwrite the oldest entry once full.

    Time-limit truncations are stored as non-terminal (``done`` stays 0) so
    bootstrapped targets keep their continuation term.
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int, warm_size: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.warm_size = int(warm_size)
        self._states = np.empty((self.capacity, state_dim))
        self._actions = np.empty((self.capacity, action_dim))
        self._rewards = np.empty(self.capacity)
        self._next_states = np.empty((self.capacity, state_dim))
        self._dones = np.empty(self.capacity)
        self._pos = 0
        self._size = 0
        self.total_pushed = 0

    @property
    def size(self) -> int:
        return self._size

    def push(self, tr: Transition) -> None:
        i = self._pos
        self._states[i] = tr.state
        self._actions[i] = tr.action
        self._rewards[i] = tr.reward
        self._next_states[i] = tr.next_state
        self._dones[i] = 1.0 if tr.done else 0.0
        self._pos = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        self.total_pushed += 1

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self._size < batch_size:
            raise ValueError(f"cannot sample {batch_size} transitions from buffer of size {self._size}")
        idx = rng.integers(0, self._size, size=batch_size)
        return Batch(
            states=self._states[idx],
            actions=self._actions[idx],
            rewards=self._rewards[idx],
            next_states=self._next_states[idx],
            dones=self._dones[idx],
        )
