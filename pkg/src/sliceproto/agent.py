"""Per-slice DQN agent: action selection, prioritized replay, learning step.

Each agent owns its own network, target network, optimizer state, replay
buffer and RNG streams; nothing is shared between the three agents of a run,
which execute in a fixed round-robin order for determinism.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import nn
from .comm import MessagePolicy, action_space_size, decode_action, encode_action
from .nn import AdamState, LossBreakdown, QNetwork

PRIORITY_FLOOR = 1e-3


@dataclass(frozen=True)
class AgentConfig:
    """Learning hyperparameters shared by all agents of a run."""

    gamma: float = 0.99
    lr: float = 0.0005
    batch_size: int = 64
    epsilon_start: float = 1.0
    epsilon_decay: float = 0.985
    epsilon_floor: float = 0.01
    beta_start: float = 0.0
    beta_anneal_rate: float = 0.0001
    per_alpha: float = 0.6
    per_beta_is_start: float = 0.4
    per_beta_is_end: float = 1.0
    target_sync_period: int = 200
    replay_capacity: int = 50_000
    hidden_dim: int = nn.HIDDEN_DIM
    bottleneck_dim: int = nn.BOTTLENECK_DIM
    # Optimistic initial Q (head bias): greedy selection sweeps the action
    # space early without the collision cost of stochastic exploration.
    q_init_optimism: float = 20.0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.beta_start < 0:
            raise ValueError("beta_start must be non-negative")

    def epsilon_at(self, episode: int) -> float:
        return max(self.epsilon_floor, self.epsilon_start * self.epsilon_decay**episode)

    def beta_at(self, episode: int) -> float:
        return self.beta_start + self.beta_anneal_rate * episode

    def per_beta_is_at(self, episode: int, episodes: int) -> float:
        """Importance-sampling exponent, linear from start to end over the run."""
        if episodes <= 1:
            return self.per_beta_is_end
        frac = episode / (episodes - 1)
        lo, hi = self.per_beta_is_start, self.per_beta_is_end
        return min(hi, lo + (hi - lo) * frac)


@dataclass
class Transition:
    """One experience tuple, with the joint action stored as a flat index."""

    obs: np.ndarray
    action_index: int
    reward: float
    next_obs: np.ndarray
    done: bool


class PrioritizedReplay:
    """Ring buffer sampling transitions proportionally to priority^alpha.

    New transitions enter at the running max priority so they are replayed
    at least once before their TD error is known.  Stored observations live
    in preallocated arrays for cheap batch gathers.
    """

    def __init__(self, capacity: int, obs_dim: int, alpha: float = 0.6):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.alpha = alpha
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.priorities = np.zeros(capacity)
        self.prio_alpha = np.zeros(capacity)
        self.max_priority = 1.0
        self.size = 0
        self.write = 0

    def __len__(self) -> int:
        return self.size

    def store(self, transition: Transition) -> None:
        i = self.write
        self.obs[i] = transition.obs
        self.next_obs[i] = transition.next_obs
        self.actions[i] = transition.action_index
        self.rewards[i] = transition.reward
        self.dones[i] = transition.done
        self.priorities[i] = self.max_priority
        self.prio_alpha[i] = self.max_priority**self.alpha
        self.write = (self.write + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, beta_is: float, rng: np.random.Generator):
        """Draw a batch with P(i) = p_i^alpha / sum_j p_j^alpha.

        Importance weights (N * P(i))^(-beta_is) are normalized by the batch
        max so the largest weight is exactly 1.
        """
        n = self.size
        if n < batch_size:
            raise ValueError(f"need {batch_size} transitions, have {n}")
        cdf = np.cumsum(self.prio_alpha[:n])
        total = cdf[-1]
        draws = rng.random(batch_size) * total
        indices = np.searchsorted(cdf, draws, side="right")
        probs = self.prio_alpha[indices] / total
        weights = (n * probs) ** (-beta_is)
        weights = weights / weights.max()
        return indices, weights

    def gather(self, indices: np.ndarray):
        return (
            self.obs[indices],
            self.actions[indices],
            self.rewards[indices],
            self.next_obs[indices],
            self.dones[indices],
        )

    def update_priorities(self, indices: np.ndarray, td_errors: np.ndarray) -> None:
        indices = np.asarray(indices)
        if indices.size and indices.max() >= self.size:
            raise IndexError("stale replay index beyond current buffer")
        p = np.abs(np.asarray(td_errors, dtype=float)) + PRIORITY_FLOOR
        self.priorities[indices] = p
        self.prio_alpha[indices] = p**self.alpha
        self.max_priority = max(self.max_priority, float(p.max()))


def select_action(q: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over one Q-vector; greedy ties break to the lowest index."""
    q = np.asarray(q)
    if q.size == 0:
        raise ValueError("empty Q-vector")
    if not np.isfinite(q).all():
        raise ValueError("non-finite Q-values")
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


def td_targets(
    rewards: np.ndarray,
    next_obs: np.ndarray,
    dones: np.ndarray,
    target_net: QNetwork,
    gamma: float,
) -> np.ndarray:
    """One-step targets r + gamma * max_a' Q_target(s', a'), truncated at done."""
    q_next = np.atleast_2d(target_net.q_values(next_obs))
    best = q_next.max(axis=1)
    return rewards + gamma * (1.0 - dones.astype(float)) * best


class Agent:
    """One slice's learner, wiring the network to its replay buffer."""

    def __init__(
        self,
        agent_id: int,
        obs_dim: int,
        policy: MessagePolicy,
        config: AgentConfig,
        seed_seq: np.random.SeedSequence,
    ):
        self.agent_id = agent_id
        self.policy = policy
        self.config = config
        self.n_actions = action_space_size(policy)
        self.n_msg = 1 if policy.silent else policy.alphabet_size
        # Observation layout is [served, gap, one one-hot block per peer].
        if policy.silent:
            if obs_dim != 2:
                raise ValueError(f"silent policy expects obs_dim 2, got {obs_dim}")
        elif (obs_dim - 2) <= 0 or (obs_dim - 2) % policy.alphabet_size != 0:
            raise ValueError(
                f"obs_dim {obs_dim} inconsistent with alphabet {policy.alphabet_size}"
            )

        init_ss, explore_ss, noise_ss, replay_ss = seed_seq.spawn(4)
        self.explore_rng = np.random.default_rng(explore_ss)
        self.noise_rng = np.random.default_rng(noise_ss)
        self.replay_rng = np.random.default_rng(replay_ss)

        self.net = QNetwork(
            obs_dim,
            self.n_actions,
            config.hidden_dim,
            config.bottleneck_dim,
            rng=np.random.default_rng(init_ss),
        )
        self.net.view("b_q")[...] = config.q_init_optimism
        self.target_net = self.net.clone()
        self.adam = AdamState.for_params(self.net.params)
        self.replay = PrioritizedReplay(
            config.replay_capacity, obs_dim, alpha=config.per_alpha
        )
        self.learn_count = 0

    def act(self, obs: np.ndarray, epsilon: float, stochastic: bool = True) -> int:
        """Pick a joint action index; stochastic=False is pure greedy on the mean path."""
        noise = (
            self.noise_rng.standard_normal(self.net.bottleneck_dim)
            if stochastic
            else None
        )
        q = self.net.q_values(obs, noise)
        return select_action(q, epsilon, self.explore_rng)

    def decode(self, action_index: int) -> tuple[int, int]:
        return decode_action(action_index, self.n_msg)

    def encode(self, cpu_level: int, msg: int) -> int:
        return encode_action(cpu_level, msg, self.n_msg)

    def store(self, transition: Transition) -> None:
        self.replay.store(transition)

    def learn(self, beta: float, beta_is: float) -> Optional[LossBreakdown]:
        """One gradient step from a prioritized batch; None while warming up."""
        cfg = self.config
        if len(self.replay) < cfg.batch_size:
            return None
        indices, weights = self.replay.sample(cfg.batch_size, beta_is, self.replay_rng)
        obs, actions, rewards, next_obs, dones = self.replay.gather(indices)
        targets = td_targets(rewards, next_obs, dones, self.target_net, cfg.gamma)
        noise = self.noise_rng.standard_normal((cfg.batch_size, self.net.bottleneck_dim))
        breakdown, td_errors, grads = nn.training_loss(
            self.net, obs, noise, actions, targets, weights, beta
        )
        grads = nn.clip_grad_norm(grads)
        nn.adam_step(self.net.params, grads, self.adam, lr=cfg.lr)
        self.replay.update_priorities(indices, td_errors)
        self.learn_count += 1
        if self.learn_count % cfg.target_sync_period == 0:
            self.target_net.copy_from(self.net)
        return breakdown

    # -- checkpointing: the nn format plus a small agent header ------------

    def save(self, path, episode: int, epsilon: float, beta: float, beta_is: float):
        np.savez(
            path,
            version=np.array([nn.CHECKPOINT_VERSION]),
            dims=np.array(
                [
                    self.net.obs_dim,
                    self.net.n_actions,
                    self.net.hidden_dim,
                    self.net.bottleneck_dim,
                ]
            ),
            params=self.net.params,
            target_params=self.target_net.params,
            header=np.array([float(episode), epsilon, beta, beta_is]),
            agent_id=np.array([self.agent_id]),
        )

    @staticmethod
    def load(
        path,
        policy: MessagePolicy,
        config: AgentConfig,
        seed_seq: np.random.SeedSequence,
    ) -> tuple["Agent", dict]:
        with np.load(path) as data:
            version = int(data["version"][0])
            if version != nn.CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            obs_dim = int(data["dims"][0])
            agent = Agent(int(data["agent_id"][0]), obs_dim, policy, config, seed_seq)
            agent.net.params[...] = data["params"]
            agent.target_net.params[...] = data["target_params"]
            episode, epsilon, beta, beta_is = (float(x) for x in data["header"])
        header = {
            "episode": int(episode),
            "epsilon": epsilon,
            "beta": beta,
            "beta_is": beta_is,
        }
        return agent, header
