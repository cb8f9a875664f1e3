"""Trajectory-entropy-constrained actor-critic toolkit with exact verification."""

from .agents import AgentConfig, EntropyBudget, TecrlAgent, Temperature, budget_from_config
from .buffer import Batch, ReplayBuffer
from .envs import EnvSpec, MdpSpec, Transition, make_env
from .harness import FinalScore, RunMetrics, evaluate, final_score, run_training
from .maxent import MaxEntAgent
from .policy import ActionSample, GaussianPolicyHead
from .tabular import (
    BoundReport,
    TabularPolicy,
    bound_check,
    exact_qe,
    soft_optimal_solve,
    tec_optimal_solve,
    trajectory_entropy,
)

__version__ = "0.1.0"
