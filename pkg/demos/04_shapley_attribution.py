"""Attribute a trained network's decisions to its observation features.

Permutation-sampling Shapley values on the greedy Q-value: how much do the
served-traffic reading, the allocation gap, and each peer's message block
move the prediction away from a baseline observation?

Run:  python3 demos/04_shapley_attribution.py
"""

from dataclasses import replace

import numpy as np

from sliceproto import AttributionConfig, MessagePolicy, RunConfig, attribute_dataset
from sliceproto.attribution import FEATURE_NAMES, feature_groups, greedy_value, shapley_sample
from sliceproto.train import collect_eval_observations, run_training

config = replace(RunConfig(), episodes=80, eval_episodes=0)
result = run_training(config, seed=0)
agent = result.agents[2]  # explain the third slice's agent

obs = collect_eval_observations(result.agents, config, seed=0, episodes=5, agent_id=2)
print(f"dataset: {obs.shape[0]} observations of dim {obs.shape[1]}")

# Shapley axioms on display: attributions telescope to f(x) - f(baseline).
f = greedy_value(agent.net)
groups = feature_groups(config.policy)
baseline = obs.mean(axis=0)
attr = shapley_sample(f, baseline, obs[7], groups, 2000, np.random.default_rng(0))
print("single observation:", dict(zip(FEATURE_NAMES, attr.round(4))))
print(f"sum {attr.sum():.4f} == f(x) - f(baseline) {f(obs[7]) - f(baseline):.4f}")

out = attribute_dataset(
    agent.net, obs[:40], config.policy, AttributionConfig(n_permutations=500)
)
print("\nper-feature attribution distributions over 40 observations:")
for name, values in out.items():
    print(f"  {name:<10} mean {values.mean():+.4f}   std {values.std():.4f}")
