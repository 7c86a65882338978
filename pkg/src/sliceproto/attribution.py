"""Post-hoc feature attribution for trained Q-networks.

Sampling-based Shapley values: for each random permutation of the feature
groups, inputs are switched one group at a time from a baseline composite to
the target observation, and a group's marginal contribution is the change in
the value function when it switches.  Averaging over permutations estimates
each group's Shapley value; the per-permutation deltas telescope, so the
attributions always sum to f(target) - f(baseline).

Feature groups: the served-traffic scalar, the allocation-gap scalar, and
one group per peer's one-hot message block (attributing individual one-hot
bits would be meaningless).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .comm import MessagePolicy
from .nn import QNetwork

FEATURE_NAMES = ("traffic", "alloc_gap", "code_peer1", "code_peer2")


@dataclass(frozen=True)
class AttributionConfig:
    n_permutations: int = 2000
    baseline: str = "mean"   # "mean" of the dataset or "zeros"
    seed: int = 0

    def __post_init__(self):
        if self.n_permutations < 1:
            raise ValueError("n_permutations must be >= 1")
        if self.baseline not in ("mean", "zeros"):
            raise ValueError("baseline must be 'mean' or 'zeros'")


def feature_groups(policy: MessagePolicy, n_peers: int = 2) -> list[np.ndarray]:
    """Index groups of the observation vector, one group per Shapley player."""
    groups = [np.array([0]), np.array([1])]
    k = policy.alphabet_size
    for p in range(n_peers if k > 0 else 0):
        start = 2 + p * k
        groups.append(np.arange(start, start + k))
    return groups


def greedy_value(net: QNetwork) -> Callable[[np.ndarray], float]:
    """Value function for attribution: best joint-action Q, deterministic path."""

    def value(obs: np.ndarray) -> float:
        return float(np.max(net.q_values(obs)))

    return value


def shapley_sample(
    value_fn: Callable[[np.ndarray], float],
    baseline_obs: np.ndarray,
    target_obs: np.ndarray,
    groups: Sequence[np.ndarray],
    n_permutations: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Permutation-sampling Shapley attribution of f(target) vs f(baseline)."""
    baseline_obs = np.asarray(baseline_obs, dtype=float)
    target_obs = np.asarray(target_obs, dtype=float)
    if baseline_obs.shape != target_obs.shape:
        raise ValueError("baseline/target dimension mismatch")
    n_groups = len(groups)
    totals = np.zeros(n_groups)
    for _ in range(n_permutations):
        order = rng.permutation(n_groups)
        x = baseline_obs.copy()
        prev = value_fn(x)
        for g in order:
            x[groups[g]] = target_obs[groups[g]]
            cur = value_fn(x)
            totals[g] += cur - prev
            prev = cur
    return totals / n_permutations


def attribute_dataset(
    net: QNetwork,
    observations: np.ndarray,
    policy: MessagePolicy,
    config: Optional[AttributionConfig] = None,
) -> dict[str, np.ndarray]:
    """Shapley attributions for every observation of a dataset.

    Returns one array per named feature group.  Each observation gets its
    own RNG stream derived from (config.seed, row index), so rows can be
    recomputed independently and in any order.
    """
    config = config or AttributionConfig()
    observations = np.atleast_2d(np.asarray(observations, dtype=float))
    if observations.size == 0:
        raise ValueError("empty observation dataset")
    groups = feature_groups(policy)
    if config.baseline == "mean":
        baseline = observations.mean(axis=0)
    else:
        baseline = np.zeros(observations.shape[1])
    value_fn = greedy_value(net)
    names = FEATURE_NAMES[: len(groups)]
    out = {name: np.zeros(len(observations)) for name in names}
    for i, obs in enumerate(observations):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, i]))
        attr = shapley_sample(
            value_fn, baseline, obs, groups, config.n_permutations, rng
        )
        for j, name in enumerate(names):
            out[name][i] = attr[j]
    return out


def write_attributions_csv(path, attributions: dict[str, np.ndarray]) -> None:
    """One column per feature, one row per observation."""
    names = list(attributions.keys())
    n = len(next(iter(attributions.values())))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(n):
            writer.writerow([repr(float(attributions[name][i])) for name in names])
