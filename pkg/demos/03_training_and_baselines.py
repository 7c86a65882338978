"""Train the three agents briefly and compare message policies.

A full-length run uses 500 episodes (see README); this demo trims the run so
it finishes in about a minute while showing the whole pipeline: training,
conflict windows, frozen-policy evaluation, and the policy comparison.

Run:  python3 demos/03_training_and_baselines.py
"""

from dataclasses import replace

import numpy as np

from sliceproto import MessagePolicy, RunConfig, latency_stats, utilization_series
from sliceproto.train import run_experiment, windowed_conflicts

config = replace(RunConfig(), episodes=120, eval_episodes=10)

for policy in ("emergent:3", "silent"):
    result = run_experiment(config.with_policy(MessagePolicy.parse(policy)), seed=0)
    windows = windowed_conflicts(result.train_log, window=30)
    median, iqr, _ = latency_stats(result.eval_log)
    _, in_band = utilization_series(result.eval_log)
    print(f"policy {policy}")
    print(f"  conflicts/episode by 30-episode window: {np.round(windows, 2)}")
    print(f"  frozen-policy eval: median latency {median:.2f} ms, IQR {iqr:.2f} ms")
    print(f"  episodes with mean utilization inside [0.10, 0.90]: {in_band:.0%}")
    print(f"  wall clock: {result.wall_clock_s:.1f}s")
