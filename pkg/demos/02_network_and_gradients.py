"""The Q-network with its stochastic bottleneck, checked against finite
differences, plus the closed-form KL versus a Monte Carlo estimate.

Run:  python3 demos/02_network_and_gradients.py
"""

import numpy as np

from sliceproto import QNetwork, kl_standard_normal
from sliceproto.nn import draw_gradcheck_obs, finite_diff_check, make_loss_closure

rng = np.random.default_rng(0)
net = QNetwork(obs_dim=8, n_actions=18, rng=rng)
print(f"network: 8 -> 64 (ReLU) -> 32 bottleneck -> 18 Q-values, {net.n_params} params")

obs = rng.uniform(-1, 1, 8)
q_det, mu, logvar, _ = net.forward(obs)  # deterministic mean path
q_noisy = net.q_values(obs, rng.standard_normal(32))
print("greedy action (mean path):", int(np.argmax(q_det)))
print("same obs with sampled bottleneck noise differs:", not np.allclose(q_det, q_noisy))

# Closed-form KL against a 1e6-sample Monte Carlo estimate.
z = mu + np.exp(0.5 * logvar) * rng.standard_normal((1_000_000, mu.size))
log_q = -0.5 * (((z - mu) ** 2) / np.exp(logvar) + logvar + np.log(2 * np.pi)).sum(axis=1)
log_p = -0.5 * (z**2 + np.log(2 * np.pi)).sum(axis=1)
print(f"KL closed form {kl_standard_normal(mu, logvar):.4f} vs Monte Carlo {(log_q - log_p).mean():.4f}")

# Every parameter's backprop gradient against central finite differences.
check_obs = draw_gradcheck_obs(net, rng)
loss = make_loss_closure(
    obs=check_obs,
    noise=rng.standard_normal(32),
    actions=np.array([4]),
    targets=np.array([0.7]),
    is_weights=np.array([1.0]),
    beta=0.05,
)
err = finite_diff_check(net, loss)
print(f"max relative gradient error over all {net.n_params} parameters: {err:.2e}")
