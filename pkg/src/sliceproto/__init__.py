"""Simulator and learning library for emergent inter-slice CPU coordination.

Three slice-orchestration agents learn CPU-allocation levels plus discrete
control messages with a KL-regularized deep Q-network; a conflict-resolution
protocol emerges from training.  The package ships the queueing environment,
the from-scratch network and optimizer, prioritized replay, the training
orchestrator with baselines, and Shapley-based attribution of the learned
policies.
"""

from .agent import Agent, AgentConfig, PrioritizedReplay, Transition, select_action
from .attribution import AttributionConfig, attribute_dataset, shapley_sample
from .comm import MessagePolicy, action_space_size, decode_action, encode_inbound
from .env import (
    ActionPair,
    ClusterSpec,
    RewardConfig,
    SliceEnv,
    SliceSpec,
    SliceState,
    StepOutcome,
    advance_queues,
    compute_reward,
    compute_utilization,
    default_cluster,
    grant_allocations,
    sample_traffic,
)
from .nn import (
    AdamState,
    LossBreakdown,
    QNetwork,
    adam_step,
    finite_diff_check,
    kl_standard_normal,
    td_loss,
    total_loss,
)
from .train import (
    MetricsLog,
    RunConfig,
    anneal_beta,
    latency_stats,
    run_evaluation,
    run_experiment,
    run_many,
    run_training,
    sweep_alphabet,
    utilization_series,
    windowed_conflicts,
)

__version__ = "0.1.0"

__all__ = [
    "ActionPair",
    "AdamState",
    "Agent",
    "AgentConfig",
    "AttributionConfig",
    "ClusterSpec",
    "LossBreakdown",
    "MessagePolicy",
    "MetricsLog",
    "PrioritizedReplay",
    "QNetwork",
    "RewardConfig",
    "RunConfig",
    "SliceEnv",
    "SliceSpec",
    "SliceState",
    "StepOutcome",
    "Transition",
    "action_space_size",
    "adam_step",
    "advance_queues",
    "anneal_beta",
    "attribute_dataset",
    "compute_reward",
    "compute_utilization",
    "decode_action",
    "default_cluster",
    "encode_inbound",
    "finite_diff_check",
    "grant_allocations",
    "kl_standard_normal",
    "latency_stats",
    "run_evaluation",
    "run_experiment",
    "run_many",
    "run_training",
    "sample_traffic",
    "select_action",
    "shapley_sample",
    "sweep_alphabet",
    "td_loss",
    "total_loss",
    "utilization_series",
    "windowed_conflicts",
]
