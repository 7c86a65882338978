"""Walk through the slicing environment: queues, grants, conflicts, rewards.

Run:  python3 demos/01_queueing_environment.py
"""

import numpy as np

from sliceproto import ActionPair, SliceEnv, grant_allocations

env = SliceEnv()
print("Slices:")
for spec in env.cluster.slices:
    print(
        f"  {spec.service_class:<6} share={spec.cpu_share:>4.1f} GHz  "
        f"traffic={spec.traffic_mean:.2f}±{spec.traffic_std:.2f} Mbps  "
        f"radio={spec.radio_nominal:.2f} Mbps"
    )
print(f"Shared pool: {env.cluster.cpu_total} GHz\n")

# Grants pass through while the pool suffices; oversubscription scales down.
for requests in ([15.0, 15.0, 10.0], [22.5, 22.5, 15.0]):
    granted, conflict = grant_allocations(requests, env.cluster)
    print(f"requests={requests} -> granted={granted.round(2).tolist()} conflict={conflict}")

# A short rollout with everyone at their default share (level index 3).
obs = env.reset(seed=0)
print("\nobservation layout: [served_norm, gap_norm, peer1 one-hot, peer2 one-hot]")
print("initial obs, agent 0:", np.round(obs[0], 3))

share_level = ActionPair(cpu_level=3, message=0)
for step in range(5):
    out = env.step([share_level] * 3)
    print(
        f"step {step}: latency={out.latencies.round(2)} ms  "
        f"util={out.utilization:.2f}  reward={out.rewards.round(3)}"
    )

# Greedy requests from everyone force a conflict and a proportional scale-down.
out = env.step([ActionPair(5, 1)] * 3)
print(
    f"\nall agents request 1.5x share: conflict={out.conflict}, "
    f"granted={out.granted_ghz.round(2)} (sums to the pool)"
)
print("the symbol-1 messages land in the observations agents act on next step:")
print("agent 0 obs:", np.round(out.observations[0], 3))
