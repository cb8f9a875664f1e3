"""Training driver, evaluation protocol and metrics persistence.

A run is fully determined by (config, seed): the master seed fans out into
component streams, evaluation episodes reuse one fixed seed so curves
reflect policy change only, and metrics are serialized with round-trip
float formatting, so reruns produce byte-identical CSVs.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agents import AgentConfig, TecrlAgent
from .autodiff import save_checkpoint
from .envs import make_env
from .maxent import MaxEntAgent
from .seeding import seed_streams

__all__ = [
    "RunMetrics",
    "FinalScore",
    "TrainResult",
    "evaluate",
    "final_score",
    "make_agent",
    "run_training",
    "write_metrics_csv",
    "read_metrics_csv",
]

_CSV_VERSION = "tecrl-metrics-v1"
_COLUMNS = ("iteration", "eval_mean_return", "eval_std_return", "alpha",
            "cumulative_entropy_estimate", "loss_pev", "loss_pis", "loss_pim", "loss_tup")


@dataclass
class RunMetrics:
    """One evaluation-point record.

    ``cumulative_entropy_estimate`` is the agent's entropy-control signal:
    the mean of -log pi + Q_e for the constrained agent, the mean step
    entropy for the baseline.
    """

    iteration: int
    eval_mean_return: float
    eval_std_return: float
    alpha: float
    cumulative_entropy_estimate: float
    loss_pev: float
    loss_pis: float
    loss_pim: float
    loss_tup: float


@dataclass
class FinalScore:
    """Per-seed best evaluation inside the final 10% window, aggregated."""

    per_seed: dict
    mean: float
    std: float

    def to_json(self) -> str:
        return json.dumps(
            {"per_seed": {str(k): v for k, v in sorted(self.per_seed.items())},
             "mean": self.mean, "std": self.std},
            sort_keys=True,
        )


def evaluate(policy, env, n_episodes: int = 10, seed: int = 0) -> tuple[float, float]:
    """Undiscounted return of the deterministic policy, averaged over
    ``n_episodes`` episodes seeded ``seed + k``."""
    returns = np.empty(n_episodes)
    for k in range(n_episodes):
        state = env.reset(seed + k)
        total = 0.0
        while True:
            action = policy.deterministic_action(state[None, :])[0]
            tr = env.step(action)
            total += tr.reward
            if tr.done or tr.truncated:
                break
            state = tr.next_state
        returns[k] = total
    return float(returns.mean()), float(returns.std())


def final_score(series_by_seed: dict[int, list[RunMetrics]], total_iterations: int) -> FinalScore:
    """Max evaluation return within [0.9 * total, total] per seed, then the
    cross-seed mean and (population) standard deviation."""
    window_start = 0.9 * total_iterations
    per_seed = {}
    for seed, records in series_by_seed.items():
        window = [r.eval_mean_return for r in records
                  if window_start <= r.iteration <= total_iterations]
        if not window:
            raise ValueError(f"seed {seed}: no evaluations inside the final 10% window")
        per_seed[seed] = max(window)
    values = np.array(list(per_seed.values()), dtype=np.float64)
    return FinalScore(per_seed, float(values.mean()), float(values.std()))


def make_agent(env_spec, config: AgentConfig, streams: dict):
    if config.algo == "tecrl":
        return TecrlAgent(env_spec, config, streams)
    return MaxEntAgent(env_spec, config, streams)


def write_metrics_csv(path, records: list[RunMetrics], config: AgentConfig) -> None:
    lines = [f"# {_CSV_VERSION} env={config.env} algo={config.algo} seed={config.seed}"]
    lines.append(",".join(_COLUMNS))
    for r in records:
        row = [str(r.iteration)] + [repr(getattr(r, c)) for c in _COLUMNS[1:]]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics_csv(path) -> tuple[list[RunMetrics], dict]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(f"# {_CSV_VERSION}"):
        raise ValueError(f"{path}: not a {_CSV_VERSION} file")
    meta = dict(part.split("=", 1) for part in lines[0][2:].split()[1:])
    records = []
    for line in lines[2:]:
        if not line:
            continue
        parts = line.split(",")
        records.append(RunMetrics(int(parts[0]), *(float(p) for p in parts[1:])))
    return records, meta


@dataclass
class TrainResult:
    config: AgentConfig
    records: list
    metrics_path: Path
    checkpoint_path: Path
    score_path: Path
    score: FinalScore


def _checkpoint_stores(agent) -> dict:
    stores = {"policy": agent.policy_store, "temperature": agent.temperature._store}
    if isinstance(agent, TecrlAgent):
        stores.update(q_r=agent.critics.qr_store, q_e=agent.critics.qe_store,
                      q_r_target=agent.critics.qr_target_store,
                      q_e_target=agent.critics.qe_target_store)
    else:
        stores.update(q_soft=agent.critics.store, q_soft_target=agent.critics.target_store)
    return stores


def load_agent(checkpoint_path):
    """Rebuild an agent (and its config) from a training checkpoint."""
    from .autodiff import load_checkpoint

    state, meta = load_checkpoint(checkpoint_path)
    raw = dict(meta["config"])
    raw["hidden"] = tuple(raw["hidden"])
    raw["env_overrides"] = dict(raw.get("env_overrides") or {})
    config = AgentConfig(**raw)
    env = make_env(config.env, **config.env_overrides)
    agent = make_agent(env.spec, config, seed_streams(config.seed))
    for name, store in _checkpoint_stores(agent).items():
        store.load_state(state[name]["params"], state[name]["step_count"])
    return agent, config


def run_training(config: AgentConfig, out_dir) -> TrainResult:
    """Train one (config, seed) run end to end.

    Writes ``metrics_seed<seed>.csv``, ``checkpoint_seed<seed>.ckpt`` (with
    the resolved config in its header) and ``finalscore_seed<seed>.json``
    into ``out_dir``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    streams = seed_streams(config.seed)
    env = make_env(config.env, **config.env_overrides)
    eval_env = make_env(config.env, **config.env_overrides)
    agent = make_agent(env.spec, config, streams)
    buffer = agent.make_buffer()
    eval_seed = int(streams["eval"].integers(2**63 - 1))

    records: list[RunMetrics] = []
    for it in range(config.total_iterations):
        agent.train_iteration(env, buffer)
        if (it + 1) % config.eval_interval == 0:
            mean, std = evaluate(agent.policy, eval_env, config.eval_episodes, eval_seed)
            records.append(RunMetrics(
                iteration=it + 1,
                eval_mean_return=mean,
                eval_std_return=std,
                alpha=agent.temperature.alpha,
                cumulative_entropy_estimate=agent.entropy_signal,
                loss_pev=agent.last_losses["pev"],
                loss_pis=agent.last_losses["pis"],
                loss_pim=agent.last_losses["pim"],
                loss_tup=agent.last_losses["tup"],
            ))

    metrics_path = out / f"metrics_seed{config.seed}.csv"
    write_metrics_csv(metrics_path, records, config)
    meta = dataclasses.asdict(config)
    meta["hidden"] = list(meta["hidden"])
    checkpoint_path = out / f"checkpoint_seed{config.seed}.ckpt"
    save_checkpoint(checkpoint_path, _checkpoint_stores(agent), meta={"config": meta})
    if records:
        score = final_score({config.seed: records}, config.total_iterations)
    else:
        score = FinalScore({config.seed: math.nan}, math.nan, 0.0)
    score_path = out / f"finalscore_seed{config.seed}.json"
    score_path.write_text(score.to_json() + "\n")
    return TrainResult(config, records, metrics_path, checkpoint_path, score_path, score)
