"""Master-seed fan-out into independent component streams.

Each component (environment resets, network inits, buffer sampling, action
noise, evaluation) gets its own spawned generator, so toggling or reseeding
one never perturbs the draws any other one sees.
"""

from __future__ import annotations

import numpy as np

__all__ = ["STREAM_NAMES", "seed_streams"]

STREAM_NAMES = ("env", "policy_init", "critic_init", "buffer", "noise", "eval")


def seed_streams(master_seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(master_seed).spawn(len(STREAM_NAMES))
    return {name: np.random.default_rng(seq) for name, seq in zip(STREAM_NAMES, children)}
