"""Discrete-time network-slicing environment.

Three service slices (eMBB / URLLC / mMTC) share one edge CPU pool.  Each
slice owns a two-stage fluid queue: a transmission queue drained at the
per-step radio rate, feeding a computation queue drained at the granted CPU
frequency.  Per-step latency is the sum of both queues' backlog/rate delays.

Agents request CPU as a multiplier of their default share.  When the summed
requests exceed the pool, the step is flagged as a conflict and every grant
is scaled down proportionally so the pool is never oversubscribed.
Messages emitted at step t are delivered inside the observations of step
t+1, so there is no intra-step circular dependence.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .comm import (
    NO_MESSAGE,
    MessagePolicy,
    decode_action,
    encode_inbound,
    predefined_message,
)

SERVICE_CLASSES = ("eMBB", "URLLC", "mMTC")

# Requestable CPU levels as multipliers of a slice's default share.  The
# range allows both underuse and preemption past the share; 0 is excluded so
# no slice can fully starve itself by accident.
CPU_LEVELS = (0.25, 0.5, 0.75, 1.0, 1.25, 1.5)

MBPS = 1e6   # bits per second
GHZ = 1e9    # cycles per second


@dataclass(frozen=True)
class SliceSpec:
    """Static description of one slice: traffic statistics and CPU share."""

    id: int
    service_class: str
    traffic_mean: float      # Mbps
    traffic_std: float       # Mbps
    cpu_share: float         # GHz
    radio_nominal: float     # Mbps

    def __post_init__(self):
        if self.service_class not in SERVICE_CLASSES:
            raise ValueError(f"unknown service class {self.service_class!r}")
        if self.traffic_mean <= 0:
            raise ValueError("traffic_mean must be positive")
        if self.traffic_std < 0:
            raise ValueError("traffic_std must be non-negative")
        if self.cpu_share <= 0:
            raise ValueError("cpu_share must be positive")
        if self.radio_nominal <= 0:
            raise ValueError("radio_nominal must be positive")


@dataclass(frozen=True)
class ClusterSpec:
    """The shared pool and queue model parameters for all slices."""

    slices: tuple[SliceSpec, ...]
    cpu_total: float = 0.0           # GHz; defaults to the sum of shares
    cycles_per_bit: float = 575.0
    step_ms: float = 10.0
    latency_cap_ms: float = 100.0
    radio_fluct_low: float = 0.7
    radio_fluct_high: float = 1.0
    # Lag-1 autocorrelation of log-traffic: 0 gives independent draws per
    # step, larger values give multi-step bursts.  The stationary marginal
    # stays the moment-matched lognormal either way.
    traffic_phi: float = 0.85

    def __post_init__(self):
        if not self.slices:
            raise ValueError("cluster needs at least one slice")
        if self.cpu_total == 0.0:
            object.__setattr__(self, "cpu_total", sum(s.cpu_share for s in self.slices))
        if self.cpu_total <= 0:
            raise ValueError("cpu_total must be positive")
        if self.step_ms <= 0 or self.latency_cap_ms <= 0:
            raise ValueError("step_ms and latency_cap_ms must be positive")
        if not 0.0 < self.radio_fluct_low <= self.radio_fluct_high <= 1.0:
            raise ValueError("radio fluctuation range must satisfy 0 < low <= high <= 1")
        if not 0.0 <= self.traffic_phi < 1.0:
            raise ValueError("traffic_phi must be in [0, 1)")

    @property
    def n_slices(self) -> int:
        return len(self.slices)

    @property
    def shares(self) -> np.ndarray:
        return np.array([s.cpu_share for s in self.slices])

    def scaled_pool(self, factor: float) -> "ClusterSpec":
        """Same cluster with the shared pool tightened by ``factor``."""
        return replace(self, cpu_total=self.cpu_total * factor)


@dataclass(frozen=True)
class RewardConfig:
    """Coefficients of the per-agent step reward.

    reward = exp(-latency / latency_ref_ms)
             - conflict_penalty   * [step had a conflict]
             - underutil_penalty  * [pool utilization < underutil_threshold]
             - overutil_penalty   * [pool utilization > overutil_threshold]

    The conflict penalty equals the maximum of the exponential term, so one
    conflict always wipes out the best achievable latency reward.  The two
    utilization terms price waste: leaving the pool nearly idle and hogging
    it wholesale are both penalized, so efficient play means borrowing
    capacity when bursts need it and releasing it afterwards.
    """

    latency_ref_ms: float = 30.0
    conflict_penalty: float = 1.0
    underutil_penalty: float = 0.5
    underutil_threshold: float = 0.60
    overutil_penalty: float = 0.2
    overutil_threshold: float = 0.85


@dataclass
class SliceState:
    """Mutable per-slice queue state, all backlogs in raw units."""

    t_backlog: float = 0.0       # bits waiting in the transmission queue
    c_backlog: float = 0.0       # cycles waiting in the computation queue
    served_traffic: float = 0.0  # Mbps drained through the T-queue this step
    t_latency: float = 0.0       # ms
    c_latency: float = 0.0       # ms
    granted_cpu: float = 0.0     # GHz


class ActionPair(NamedTuple):
    """One agent's joint decision: a CPU level index and a message symbol."""

    cpu_level: int
    message: int


@dataclass
class StepOutcome:
    """Everything the environment reports after one step."""

    observations: list[np.ndarray]
    rewards: np.ndarray
    conflict: bool
    utilization: float
    latencies: np.ndarray        # per-slice total latency, ms
    done: bool
    # Extra per-step detail used by the metrics log and the test oracles.
    requests_ghz: np.ndarray = field(default_factory=lambda: np.zeros(0))
    granted_ghz: np.ndarray = field(default_factory=lambda: np.zeros(0))
    offered_mbps: np.ndarray = field(default_factory=lambda: np.zeros(0))
    radio_mbps: np.ndarray = field(default_factory=lambda: np.zeros(0))
    messages: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def default_slices() -> tuple[SliceSpec, ...]:
    """The three-slice setup used throughout: shares 15/15/10 GHz.

    Radio capacity is nominally twice the mean offered traffic so the
    transmission queue only backs up on bursts or poor radio conditions.
    """
    stats = [
        ("eMBB", 23.33, 22.38, 15.0),
        ("URLLC", 7.80, 9.25, 15.0),
        ("mMTC", 14.80, 20.86, 10.0),
    ]
    return tuple(
        SliceSpec(
            id=i,
            service_class=name,
            traffic_mean=mean,
            traffic_std=std,
            cpu_share=share,
            radio_nominal=2.0 * mean,
        )
        for i, (name, mean, std, share) in enumerate(stats)
    )


def default_cluster() -> ClusterSpec:
    return ClusterSpec(slices=default_slices())


def lognormal_params(spec: SliceSpec) -> tuple[float, float]:
    """(mu, sigma) of the lognormal moment-matched to the slice's traffic."""
    ratio2 = (spec.traffic_std / spec.traffic_mean) ** 2
    sigma2 = np.log1p(ratio2)
    mu = np.log(spec.traffic_mean) - 0.5 * sigma2
    return float(mu), float(np.sqrt(sigma2))


def sample_traffic(spec: SliceSpec, rng: np.random.Generator) -> float:
    """Draw one step's offered traffic (Mbps).

    Lognormal, moment-matched to the slice's (mean, std): always positive
    and heavy-tailed like bursty traffic.  A zero std degenerates to the
    mean exactly.
    """
    if spec.traffic_std == 0.0:
        return spec.traffic_mean
    mu, sigma = lognormal_params(spec)
    return float(rng.lognormal(mean=mu, sigma=sigma))


def advance_queues(
    state: SliceState,
    offered_mbps: float,
    radio_mbps: float,
    cpu_ghz: float,
    cluster: ClusterSpec,
) -> SliceState:
    """One fluid step of the transmission queue feeding the computation queue.

    Latencies are backlog/service-rate delays, each capped at the cluster's
    latency cap; a zero CPU pins the computation latency at the cap rather
    than dividing by zero.
    """
    dt = cluster.step_ms / 1000.0
    cap = cluster.latency_cap_ms

    t_backlog = state.t_backlog + offered_mbps * MBPS * dt
    drained_bits = min(t_backlog, radio_mbps * MBPS * dt)
    t_backlog = t_backlog - drained_bits
    served = drained_bits / dt / MBPS
    t_latency = min(t_backlog / (radio_mbps * MBPS) * 1000.0, cap)

    c_backlog = state.c_backlog + drained_bits * cluster.cycles_per_bit
    drained_cycles = min(c_backlog, cpu_ghz * GHZ * dt)
    c_backlog = c_backlog - drained_cycles
    if cpu_ghz == 0.0:
        c_latency = cap
    else:
        c_latency = min(c_backlog / (cpu_ghz * GHZ) * 1000.0, cap)

    return SliceState(
        t_backlog=t_backlog,
        c_backlog=c_backlog,
        served_traffic=served,
        t_latency=t_latency,
        c_latency=c_latency,
        granted_cpu=cpu_ghz,
    )


def grant_allocations(
    requests_ghz: Sequence[float], cluster: ClusterSpec
) -> tuple[np.ndarray, bool]:
    """Resolve simultaneous CPU requests against the shared pool.

    Requests fitting the pool pass through untouched.  Oversubscription is a
    conflict: every request is scaled by pool/total so the grants stay
    feasible while preserving relative intent.
    """
    requests = np.asarray(requests_ghz, dtype=float)
    if (requests < 0).any():
        raise ValueError("requests must be non-negative")
    total = float(requests.sum())
    if total <= cluster.cpu_total:
        return requests.copy(), False
    return requests * (cluster.cpu_total / total), True


def compute_utilization(granted_ghz: Sequence[float], cluster: ClusterSpec) -> float:
    """Fraction of the shared pool actually granted this step."""
    return float(np.sum(granted_ghz) / cluster.cpu_total)


def compute_reward(
    latency_ms: float, conflict: bool, utilization: float, cfg: RewardConfig
) -> float:
    """Exponential latency reward minus conflict and utilization penalties."""
    r = float(np.exp(-latency_ms / cfg.latency_ref_ms))
    if conflict:
        r -= cfg.conflict_penalty
    if utilization < cfg.underutil_threshold:
        r -= cfg.underutil_penalty
    if utilization > cfg.overutil_threshold:
        r -= cfg.overutil_penalty
    return r


class SliceEnv:
    """Sequential simulator for one cluster of slices.

    One instance is strictly single-threaded; run several instances with
    different seeds for parallel experiments.  All randomness flows from the
    seed given to :meth:`reset` through two dedicated streams (traffic,
    radio), so a (seed, action sequence) pair reproduces a trajectory
    bit-for-bit.
    """

    def __init__(
        self,
        cluster: Optional[ClusterSpec] = None,
        policy: Optional[MessagePolicy] = None,
        reward: Optional[RewardConfig] = None,
        steps_per_episode: int = 60,
    ):
        self.cluster = cluster or default_cluster()
        self.policy = policy or MessagePolicy.emergent(3)
        self.reward_cfg = reward or RewardConfig()
        self.steps_per_episode = steps_per_episode
        self.n_agents = self.cluster.n_slices
        self._traffic_rng: Optional[np.random.Generator] = None
        self._radio_rng: Optional[np.random.Generator] = None
        self.states: list[SliceState] = []
        self._inbound: np.ndarray = np.zeros(0, dtype=np.int64)
        self._log_traffic = np.full(self.n_agents, np.nan)
        self.step_count = 0
        self._done = True

    # -- observation layout: [served_norm, gap_norm, peer one-hot blocks] --

    def _observe(self, agent: int) -> np.ndarray:
        spec = self.cluster.slices[agent]
        st = self.states[agent]
        head = np.array(
            [
                st.served_traffic / spec.traffic_mean,
                (st.granted_cpu - spec.cpu_share) / spec.cpu_share,
            ]
        )
        if self.policy.silent:
            return head
        peers = [p for p in range(self.n_agents) if p != agent]
        blocks = encode_inbound(
            (self._inbound[p] for p in peers), self.policy.alphabet_size
        )
        return np.concatenate([head, blocks])

    def _observations(self) -> list[np.ndarray]:
        return [self._observe(i) for i in range(self.n_agents)]

    def reset(self, seed: Optional[int] = None) -> list[np.ndarray]:
        """Zero the queues and return fresh observations.

        With a seed, the traffic/radio streams are (re)derived from it;
        without one, the existing streams keep running so consecutive
        episodes see fresh traffic.
        """
        if seed is not None:
            if isinstance(seed, np.random.SeedSequence):
                ss = seed
            else:
                ss = np.random.SeedSequence(seed)
            traffic_ss, radio_ss = ss.spawn(2)
            self._traffic_rng = np.random.default_rng(traffic_ss)
            self._radio_rng = np.random.default_rng(radio_ss)
            self._log_traffic = np.full(self.n_agents, np.nan)
        if self._traffic_rng is None:
            raise RuntimeError("first reset needs a seed")
        self.states = [
            SliceState(granted_cpu=s.cpu_share) for s in self.cluster.slices
        ]
        self._inbound = np.full(self.n_agents, NO_MESSAGE, dtype=np.int64)
        self.step_count = 0
        self._done = False
        return self._observations()

    def _sample_offered(self) -> np.ndarray:
        """Per-slice offered traffic; AR(1) in log space when traffic_phi > 0.

        Burst state persists across unseeded episode resets so traffic does
        not restart with every episode.
        """
        phi = self.cluster.traffic_phi
        rng = self._traffic_rng
        out = np.zeros(self.n_agents)
        for i, spec in enumerate(self.cluster.slices):
            if spec.traffic_std == 0.0:
                out[i] = spec.traffic_mean
                continue
            if phi == 0.0:
                out[i] = sample_traffic(spec, rng)
                continue
            mu, sigma = lognormal_params(spec)
            prev = self._log_traffic[i]
            if np.isnan(prev):
                cur = rng.normal(mu, sigma)
            else:
                cur = mu + phi * (prev - mu) + sigma * np.sqrt(1.0 - phi * phi) * rng.standard_normal()
            self._log_traffic[i] = cur
            out[i] = np.exp(cur)
        return out

    def step(self, actions: Sequence[ActionPair]) -> StepOutcome:
        """Advance one step: grant CPU, move traffic, pay rewards.

        Messages carried by ``actions`` are buffered and show up in the next
        step's observations.  Under the predefined policy the message half
        of each action is overridden by the fixed share-usage code computed
        from the fresh grant.
        """
        if self._done:
            raise RuntimeError("episode finished; call reset() before stepping")
        if len(actions) != self.n_agents:
            raise ValueError(f"need {self.n_agents} actions, got {len(actions)}")

        cluster = self.cluster
        shares = [s.cpu_share for s in cluster.slices]
        requests = np.array(
            [CPU_LEVELS[a.cpu_level] * shares[i] for i, a in enumerate(actions)]
        )
        granted, conflict = grant_allocations(requests, cluster)
        utilization = compute_utilization(granted, cluster)

        offered = self._sample_offered()
        fluct = self._radio_rng.uniform(
            cluster.radio_fluct_low, cluster.radio_fluct_high, size=self.n_agents
        )
        radio = np.array(
            [s.radio_nominal * fluct[i] for i, s in enumerate(cluster.slices)]
        )

        latencies = np.zeros(self.n_agents)
        for i in range(self.n_agents):
            self.states[i] = advance_queues(
                self.states[i], offered[i], radio[i], granted[i], cluster
            )
            latencies[i] = min(
                self.states[i].t_latency + self.states[i].c_latency,
                cluster.latency_cap_ms,
            )

        rewards = np.array(
            [
                compute_reward(latencies[i], conflict, utilization, self.reward_cfg)
                for i in range(self.n_agents)
            ]
        )

        if self.policy.silent:
            messages = np.full(self.n_agents, NO_MESSAGE, dtype=np.int64)
        elif self.policy.kind == "predefined":
            # Codes describe the requested allocation (the agent's intent);
            # using post-scale-down grants would flip every code to "below"
            # on a conflict step and trigger grab cascades.
            messages = np.array(
                [predefined_message(requests[i], shares[i]) for i in range(self.n_agents)],
                dtype=np.int64,
            )
        else:
            messages = np.array([a.message for a in actions], dtype=np.int64)
        self._inbound = messages

        self.step_count += 1
        done = self.step_count >= self.steps_per_episode
        self._done = done

        return StepOutcome(
            observations=self._observations(),
            rewards=rewards,
            conflict=conflict,
            utilization=utilization,
            latencies=latencies,
            done=done,
            requests_ghz=requests,
            granted_ghz=granted,
            offered_mbps=offered,
            radio_mbps=radio,
            messages=messages,
        )

    def decode(self, agent: int, action_index: int) -> ActionPair:
        """Turn an agent's joint action index into an ActionPair."""
        n_msg = 1 if self.policy.silent else self.policy.alphabet_size
        cpu, msg = decode_action(action_index, n_msg)
        return ActionPair(cpu, msg)
