"""Training and evaluation orchestration.

One run = three agents learning for a fixed number of episodes in one
seeded environment, followed (optionally) by a frozen-policy evaluation
phase with exploration and bottleneck noise switched off.  Every per-step
quantity lands in a :class:`MetricsLog`; all reported aggregates (conflict
windows, latency quantiles, utilization bands) are recomputed from those
raw records, never accumulated on the side.

Distinct (config, seed) runs share no state and may execute in parallel
worker processes; aggregation happens after all runs complete.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .agent import Agent, AgentConfig, Transition
from .comm import MessagePolicy, observation_dim
from .env import ClusterSpec, RewardConfig, SliceEnv, StepOutcome, default_cluster

UTIL_BAND = (0.10, 0.90)

# Pool tightening used by the alphabet sweep to make conflicts hard to avoid.
SWEEP_POOL_FACTOR = 0.75

DEFAULT_SWEEP_SIZES: tuple[str, ...] = ("silent", "3", "8", "13")


@dataclass(frozen=True)
class RunConfig:
    """Everything one training run needs."""

    episodes: int = 500
    steps_per_episode: int = 60
    eval_episodes: int = 50
    policy: MessagePolicy = field(default_factory=lambda: MessagePolicy.emergent(3))
    agent: AgentConfig = field(default_factory=AgentConfig)
    cluster: ClusterSpec = field(default_factory=default_cluster)
    reward: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.steps_per_episode < 1:
            raise ValueError("steps_per_episode must be >= 1")

    def with_policy(self, policy: MessagePolicy) -> "RunConfig":
        return replace(self, policy=policy)


def anneal_beta(episode: int, rate: float = 0.001, start: float = 0.0) -> float:
    """KL coefficient schedule: linear from ``start`` at ``rate`` per episode."""
    if episode < 0:
        raise ValueError("episode must be >= 0")
    return start + rate * episode


class MetricsLog:
    """Per-step records of one run plus per-episode schedule values.

    Raw step columns: episode, step, epsilon, beta, beta_is, conflict,
    utilization, per-agent latency (ms), granted CPU (GHz), reward, and the
    message each agent emitted.
    """

    def __init__(self, episodes: int, steps: int, n_agents: int):
        self.episodes = episodes
        self.steps = steps
        self.n_agents = n_agents
        n = episodes * steps
        self.episode = np.zeros(n, dtype=np.int64)
        self.step = np.zeros(n, dtype=np.int64)
        self.epsilon = np.zeros(n)
        self.beta = np.zeros(n)
        self.beta_is = np.zeros(n)
        self.conflict = np.zeros(n, dtype=bool)
        self.utilization = np.zeros(n)
        self.latency = np.zeros((n, n_agents))
        self.granted = np.zeros((n, n_agents))
        self.reward = np.zeros((n, n_agents))
        self.message = np.zeros((n, n_agents), dtype=np.int64)
        self._rows = 0

    def add_step(
        self,
        episode: int,
        step: int,
        outcome: StepOutcome,
        epsilon: float,
        beta: float,
        beta_is: float,
    ) -> None:
        r = self._rows
        self.episode[r] = episode
        self.step[r] = step
        self.epsilon[r] = epsilon
        self.beta[r] = beta
        self.beta_is[r] = beta_is
        self.conflict[r] = outcome.conflict
        self.utilization[r] = outcome.utilization
        self.latency[r] = outcome.latencies
        self.granted[r] = outcome.granted_ghz
        self.reward[r] = outcome.rewards
        self.message[r] = outcome.messages
        self._rows += 1

    @property
    def n_rows(self) -> int:
        return self._rows

    # -- aggregates, all recomputed from the raw records -------------------

    def conflicts_per_episode(self) -> np.ndarray:
        counts = np.zeros(self.episodes)
        np.add.at(counts, self.episode[: self._rows], self.conflict[: self._rows])
        return counts

    def mean_utilization_per_episode(self) -> np.ndarray:
        sums = np.zeros(self.episodes)
        n = np.zeros(self.episodes)
        np.add.at(sums, self.episode[: self._rows], self.utilization[: self._rows])
        np.add.at(n, self.episode[: self._rows], 1.0)
        return sums / np.maximum(n, 1.0)

    def step_mean_latency(self) -> np.ndarray:
        """Across-slice mean latency of every step, ms."""
        return self.latency[: self._rows].mean(axis=1)

    # -- serialization ------------------------------------------------------

    HEADER_FIXED = ["episode", "step", "epsilon", "beta", "beta_is", "conflict", "utilization"]

    def _header(self) -> list[str]:
        cols = list(self.HEADER_FIXED)
        for prefix in ("latency", "granted", "reward", "message"):
            cols += [f"{prefix}{i}" for i in range(self.n_agents)]
        return cols

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self._header())
            for r in range(self._rows):
                row = [
                    int(self.episode[r]),
                    int(self.step[r]),
                    repr(float(self.epsilon[r])),
                    repr(float(self.beta[r])),
                    repr(float(self.beta_is[r])),
                    int(self.conflict[r]),
                    repr(float(self.utilization[r])),
                ]
                row += [repr(float(v)) for v in self.latency[r]]
                row += [repr(float(v)) for v in self.granted[r]]
                row += [repr(float(v)) for v in self.reward[r]]
                row += [int(v) for v in self.message[r]]
                writer.writerow(row)

    @staticmethod
    def from_csv(path) -> "MetricsLog":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        n_fixed = len(MetricsLog.HEADER_FIXED)
        n_agents = (len(header) - n_fixed) // 4
        episodes = int(rows[-1][0]) + 1 if rows else 0
        by_episode = {}
        for row in rows:
            by_episode.setdefault(int(row[0]), 0)
            by_episode[int(row[0])] += 1
        steps = max(by_episode.values()) if by_episode else 0
        log = MetricsLog(episodes, steps, n_agents)
        for row in rows:
            r = log._rows
            log.episode[r] = int(row[0])
            log.step[r] = int(row[1])
            log.epsilon[r] = float(row[2])
            log.beta[r] = float(row[3])
            log.beta_is[r] = float(row[4])
            log.conflict[r] = bool(int(row[5]))
            log.utilization[r] = float(row[6])
            o = n_fixed
            log.latency[r] = [float(v) for v in row[o : o + n_agents]]
            o += n_agents
            log.granted[r] = [float(v) for v in row[o : o + n_agents]]
            o += n_agents
            log.reward[r] = [float(v) for v in row[o : o + n_agents]]
            o += n_agents
            log.message[r] = [int(v) for v in row[o : o + n_agents]]
            log._rows += 1
        return log


def windowed_conflicts(log: MetricsLog, window: int = 100) -> np.ndarray:
    """Mean conflicts per episode over successive windows of episodes.

    A trailing partial window is reported as its own entry.
    """
    counts = log.conflicts_per_episode()
    if counts.size == 0:
        raise ValueError("empty metrics log")
    means = []
    for start in range(0, counts.size, window):
        means.append(counts[start : start + window].mean())
    return np.array(means)


def latency_stats(log: MetricsLog) -> tuple[float, float, np.ndarray]:
    """Median, IQR, and a 1%-grid quantile table of the step mean latency.

    The table has rows (percent, latency_ms) for percents 0..100.
    """
    lat = log.step_mean_latency()
    if lat.size == 0:
        raise ValueError("empty metrics log")
    median = float(np.percentile(lat, 50))
    iqr = float(np.percentile(lat, 75) - np.percentile(lat, 25))
    grid = np.arange(101)
    table = np.column_stack([grid, np.percentile(lat, grid)])
    return median, iqr, table


def utilization_series(
    log: MetricsLog, band: tuple[float, float] = UTIL_BAND
) -> tuple[np.ndarray, float]:
    """Per-episode mean utilization and the fraction of episodes inside ``band``."""
    series = log.mean_utilization_per_episode()
    if series.size == 0:
        raise ValueError("empty metrics log")
    lo, hi = band
    in_band = float(np.mean((series >= lo) & (series <= hi)))
    return series, in_band


@dataclass
class ExperimentResult:
    """Logs of one seeded run; ``agents`` is None when returned from a worker."""

    seed: int
    policy_name: str
    train_log: MetricsLog
    eval_log: Optional[MetricsLog]
    agents: Optional[list] = None
    wall_clock_s: float = 0.0


def _build_agents(config: RunConfig, agent_seqs) -> list[Agent]:
    obs_dim = observation_dim(config.policy, n_peers=config.cluster.n_slices - 1)
    return [
        Agent(i, obs_dim, config.policy, config.agent, agent_seqs[i])
        for i in range(config.cluster.n_slices)
    ]


def run_training(config: RunConfig, seed: int) -> ExperimentResult:
    """Train three agents for the configured number of episodes.

    Fully deterministic per (config, seed): the seed fans out into separate
    streams for env traffic, env radio, and each agent's exploration,
    bottleneck noise and replay sampling.
    """
    t0 = time.perf_counter()
    root = np.random.SeedSequence(seed)
    children = root.spawn(1 + config.cluster.n_slices)
    env = SliceEnv(
        config.cluster, config.policy, config.reward, config.steps_per_episode
    )
    agents = _build_agents(config, children[1:])
    log = MetricsLog(config.episodes, config.steps_per_episode, config.cluster.n_slices)

    obs = env.reset(seed=children[0])
    cfg = config.agent
    for episode in range(config.episodes):
        if episode > 0:
            obs = env.reset()
        epsilon = cfg.epsilon_at(episode)
        beta = cfg.beta_at(episode)
        beta_is = cfg.per_beta_is_at(episode, config.episodes)
        for step in range(config.steps_per_episode):
            # Rollouts act on the deterministic mean path; exploration comes
            # from epsilon alone.  The bottleneck is sampled in the learning
            # pass, where the reparameterized gradient needs it.
            indices = [
                agents[i].act(obs[i], epsilon, stochastic=False)
                for i in range(len(agents))
            ]
            pairs = [env.decode(i, indices[i]) for i in range(len(agents))]
            outcome = env.step(pairs)
            for i, agent in enumerate(agents):
                agent.store(
                    Transition(
                        obs=obs[i],
                        action_index=indices[i],
                        reward=float(outcome.rewards[i]),
                        next_obs=outcome.observations[i],
                        done=outcome.done,
                    )
                )
                agent.learn(beta, beta_is)
            log.add_step(episode, step, outcome, epsilon, beta, beta_is)
            obs = outcome.observations

    result = ExperimentResult(
        seed=seed,
        policy_name=config.policy.name,
        train_log=log,
        eval_log=None,
        agents=agents,
        wall_clock_s=time.perf_counter() - t0,
    )
    return result


def run_evaluation(
    agents: Sequence[Agent], config: RunConfig, seed: int, episodes: Optional[int] = None
) -> MetricsLog:
    """Frozen-policy rollouts: epsilon = 0, bottleneck noise = 0, no learning.

    The evaluation environment is reseeded from (seed, 1), so different
    policies evaluated at the same seed face identical traffic and radio
    draws.
    """
    episodes = config.eval_episodes if episodes is None else episodes
    env = SliceEnv(
        config.cluster, config.policy, config.reward, config.steps_per_episode
    )
    log = MetricsLog(episodes, config.steps_per_episode, config.cluster.n_slices)
    obs = env.reset(seed=np.random.SeedSequence([seed, 1]))
    for episode in range(episodes):
        if episode > 0:
            obs = env.reset()
        for step in range(config.steps_per_episode):
            indices = [
                agents[i].act(obs[i], epsilon=0.0, stochastic=False)
                for i in range(len(agents))
            ]
            pairs = [env.decode(i, indices[i]) for i in range(len(agents))]
            outcome = env.step(pairs)
            log.add_step(episode, step, outcome, 0.0, 0.0, 0.0)
            obs = outcome.observations
    return log


def collect_eval_observations(
    agents: Sequence[Agent],
    config: RunConfig,
    seed: int,
    episodes: int,
    agent_id: int,
) -> np.ndarray:
    """Frozen-policy rollout that returns one agent's observation dataset."""
    env = SliceEnv(
        config.cluster, config.policy, config.reward, config.steps_per_episode
    )
    collected = []
    obs = env.reset(seed=np.random.SeedSequence([seed, 2]))
    for episode in range(episodes):
        if episode > 0:
            obs = env.reset()
        for _ in range(config.steps_per_episode):
            collected.append(obs[agent_id])
            indices = [
                agents[i].act(obs[i], epsilon=0.0, stochastic=False)
                for i in range(len(agents))
            ]
            outcome = env.step([env.decode(i, indices[i]) for i in range(len(agents))])
            obs = outcome.observations
    return np.array(collected)


def run_experiment(config: RunConfig, seed: int, keep_agents: bool = True) -> ExperimentResult:
    """Training followed by frozen-policy evaluation."""
    result = run_training(config, seed)
    if config.eval_episodes > 0:
        result.eval_log = run_evaluation(result.agents, config, seed)
    if not keep_agents:
        result.agents = None
    return result


def _experiment_task(args) -> ExperimentResult:
    config, seed = args
    return run_experiment(config, seed, keep_agents=False)


def run_many(
    config: RunConfig, seeds: Sequence[int], max_workers: Optional[int] = None
) -> list[ExperimentResult]:
    """Run one experiment per seed, optionally across worker processes.

    Results come back ordered by seed regardless of scheduling; per-seed
    determinism makes parallel and serial execution indistinguishable.
    """
    if max_workers is None or max_workers <= 1 or len(seeds) <= 1:
        return [_experiment_task((config, s)) for s in seeds]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_experiment_task, [(config, s) for s in seeds]))


def final_window_conflicts(log: MetricsLog, window: int = 100) -> float:
    return float(windowed_conflicts(log, window)[-1])


def sweep_alphabet(
    config: RunConfig,
    sizes: Sequence[str] = DEFAULT_SWEEP_SIZES,
    seeds: Sequence[int] = (0,),
    pool_factor: float = SWEEP_POOL_FACTOR,
    max_workers: Optional[int] = None,
) -> dict[str, np.ndarray]:
    """Train each message-space size under a tightened CPU pool.

    ``sizes`` entries are either ``"silent"`` or an integer alphabet size.
    Returns per-size arrays of final-window conflicts, one entry per seed.
    """
    tight = replace(config, cluster=config.cluster.scaled_pool(pool_factor))
    out: dict[str, np.ndarray] = {}
    for size in sizes:
        if str(size) == "silent":
            policy = MessagePolicy.silent_policy()
        else:
            policy = MessagePolicy.emergent(int(size))
        results = run_many(tight.with_policy(policy), seeds, max_workers=max_workers)
        out[str(size)] = np.array(
            [final_window_conflicts(r.train_log) for r in results]
        )
    return out


def summary_dict(config: RunConfig, result: ExperimentResult) -> dict:
    """JSON-ready run summary: config echo, schedules, final aggregates."""
    cfg = config.agent
    log = result.train_log
    windows = windowed_conflicts(log)
    summary = {
        "policy": result.policy_name,
        "seed": result.seed,
        "episodes": config.episodes,
        "steps_per_episode": config.steps_per_episode,
        "wall_clock_s": result.wall_clock_s,
        "epsilon_first": cfg.epsilon_at(0),
        "epsilon_last": cfg.epsilon_at(config.episodes - 1),
        "beta_first": cfg.beta_at(0),
        "beta_last": cfg.beta_at(config.episodes - 1),
        "windowed_conflicts": [float(w) for w in windows],
        "config": _config_echo(config),
    }
    for name, log_part in (("train", log), ("eval", result.eval_log)):
        if log_part is None:
            continue
        median, iqr, _ = latency_stats(log_part)
        _, in_band = utilization_series(log_part)
        summary[f"{name}_latency_median_ms"] = median
        summary[f"{name}_latency_iqr_ms"] = iqr
        summary[f"{name}_util_in_band"] = in_band
        summary[f"{name}_final_window_conflicts"] = final_window_conflicts(log_part)
    return summary


def _config_echo(config: RunConfig) -> dict:
    echo = dataclasses.asdict(config)
    echo["policy"] = config.policy.name
    return echo


def write_summary(path, config: RunConfig, result: ExperimentResult) -> None:
    Path(path).write_text(json.dumps(summary_dict(config, result), indent=2) + "\n")
