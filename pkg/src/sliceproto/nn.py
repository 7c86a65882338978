"""Minimal differentiable Q-network with a stochastic bottleneck.

Architecture: dense encoder (ReLU) -> Gaussian bottleneck (mu / log-variance
heads, sampled with the reparameterization trick) -> linear Q head over the
joint (cpu level, message) action space.

Everything is explicit numpy: parameters live in one flat float64 vector
(layer weights are views into it), the backward pass is hand-derived, and
``finite_diff_check`` verifies it against central differences.  The KL of
the bottleneck posterior against a standard normal is available in closed
form and enters the training loss scaled by an annealed coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HIDDEN_DIM = 64
BOTTLENECK_DIM = 32
LOGVAR_CLAMP = 10.0

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

GRAD_CLIP_NORM = 10.0

CHECKPOINT_VERSION = 1


@dataclass
class LossBreakdown:
    """TD and KL components of one training step's loss."""

    td_loss: float
    kl_loss: float
    beta: float
    total: float


def total_loss(td: float, kl: float, beta: float) -> LossBreakdown:
    """Combine the Q-learning loss with the beta-scaled KL regularizer."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    return LossBreakdown(td_loss=td, kl_loss=kl, beta=beta, total=td + beta * kl)


def kl_standard_normal(mu: np.ndarray, logvar: np.ndarray):
    """Closed-form KL(N(mu, exp(logvar)) || N(0, I)), summed over dims.

    For 2-D inputs the KL is returned per row.
    """
    mu = np.asarray(mu, dtype=float)
    logvar = np.asarray(logvar, dtype=float)
    return 0.5 * np.sum(mu * mu + np.exp(logvar) - logvar - 1.0, axis=-1)


def td_loss(
    batch_q: np.ndarray,
    actions: np.ndarray,
    targets: np.ndarray,
    is_weights: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Importance-weighted mean squared TD error.

    Returns the scalar loss and the per-sample signed TD errors
    (Q(s,a) - target) used to refresh replay priorities.
    """
    batch_q = np.atleast_2d(batch_q)
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=float)
    is_weights = np.asarray(is_weights, dtype=float)
    if not (len(batch_q) == len(actions) == len(targets) == len(is_weights)):
        raise ValueError("batch length mismatch")
    chosen = batch_q[np.arange(len(batch_q)), actions]
    td_errors = chosen - targets
    loss = float(np.mean(is_weights * td_errors**2))
    return loss, td_errors


class QNetwork:
    """Encoder -> stochastic bottleneck -> Q head, on one flat parameter vector."""

    def __init__(
        self,
        obs_dim: int,
        n_actions: int,
        hidden_dim: int = HIDDEN_DIM,
        bottleneck_dim: int = BOTTLENECK_DIM,
        rng: np.random.Generator | None = None,
    ):
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.hidden_dim = hidden_dim
        self.bottleneck_dim = bottleneck_dim

        shapes = self._layer_shapes(obs_dim, n_actions, hidden_dim, bottleneck_dim)
        self._shapes = shapes
        self.n_params = sum(int(np.prod(s)) for s in shapes.values())
        self.params = np.zeros(self.n_params)
        self._views = {}
        offset = 0
        for name, shape in shapes.items():
            size = int(np.prod(shape))
            self._views[name] = self.params[offset : offset + size].reshape(shape)
            offset += size
        if rng is not None:
            self.init_weights(rng)

    @staticmethod
    def _layer_shapes(obs_dim, n_actions, hidden_dim, bottleneck_dim):
        return {
            "w_enc": (hidden_dim, obs_dim),
            "b_enc": (hidden_dim,),
            "w_mu": (bottleneck_dim, hidden_dim),
            "b_mu": (bottleneck_dim,),
            "w_lv": (bottleneck_dim, hidden_dim),
            "b_lv": (bottleneck_dim,),
            "w_q": (n_actions, bottleneck_dim),
            "b_q": (n_actions,),
        }

    def init_weights(self, rng: np.random.Generator) -> None:
        """Glorot-uniform weights, zero biases."""
        for name, view in self._views.items():
            if name.startswith("b_"):
                view[...] = 0.0
            else:
                fan_out, fan_in = view.shape
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                view[...] = rng.uniform(-limit, limit, size=view.shape)

    def view(self, name: str) -> np.ndarray:
        return self._views[name]

    # Views alias the flat vector, so pickling must rebuild them rather than
    # serialize the dict of slices.
    def __getstate__(self):
        return {
            "obs_dim": self.obs_dim,
            "n_actions": self.n_actions,
            "hidden_dim": self.hidden_dim,
            "bottleneck_dim": self.bottleneck_dim,
            "params": self.params,
        }

    def __setstate__(self, state):
        self.__init__(
            state["obs_dim"],
            state["n_actions"],
            state["hidden_dim"],
            state["bottleneck_dim"],
        )
        self.params[...] = state["params"]

    def copy_from(self, other: "QNetwork") -> None:
        self.params[...] = other.params

    def clone(self) -> "QNetwork":
        net = QNetwork(
            self.obs_dim, self.n_actions, self.hidden_dim, self.bottleneck_dim
        )
        net.copy_from(self)
        return net

    def forward(self, obs: np.ndarray, noise: np.ndarray | None = None):
        """Run the network on one observation or a batch.

        ``noise`` is the standard-normal bottleneck sample (zeros, or None,
        select the deterministic mean path).  Returns (q, mu, logvar, cache);
        the cache holds every intermediate the backward pass needs,
        including the noise actually used.
        """
        x = np.atleast_2d(np.asarray(obs, dtype=float))
        if not np.isfinite(x).all():
            raise ValueError("non-finite observation")
        single = np.ndim(obs) == 1
        v = self._views
        pre = x @ v["w_enc"].T + v["b_enc"]
        h = np.maximum(pre, 0.0)
        mu = h @ v["w_mu"].T + v["b_mu"]
        lv_raw = h @ v["w_lv"].T + v["b_lv"]
        lv = np.clip(lv_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)
        if noise is None:
            noise_arr = np.zeros_like(mu)
        else:
            noise_arr = np.atleast_2d(np.asarray(noise, dtype=float))
        std = np.exp(0.5 * lv)
        z = mu + std * noise_arr
        q = z @ v["w_q"].T + v["b_q"]
        cache = {
            "x": x,
            "pre": pre,
            "h": h,
            "mu": mu,
            "lv_raw": lv_raw,
            "lv": lv,
            "std": std,
            "noise": noise_arr,
            "z": z,
        }
        if single:
            return q[0], mu[0], lv[0], cache
        return q, mu, lv, cache

    def q_values(self, obs: np.ndarray, noise: np.ndarray | None = None) -> np.ndarray:
        return self.forward(obs, noise)[0]

    def backward(
        self,
        cache: dict,
        dq: np.ndarray,
        dmu_extra: np.ndarray | None = None,
        dlv_extra: np.ndarray | None = None,
    ) -> np.ndarray:
        """Exact gradients for upstream dL/dq plus direct mu/logvar terms.

        ``dmu_extra`` / ``dlv_extra`` carry the KL path (dL/dmu, dL/dlogvar
        evaluated on the clamped logvar).  Returns a flat gradient vector
        aligned with ``self.params``.
        """
        v = self._views
        x, pre, h = cache["x"], cache["pre"], cache["h"]
        lv_raw, std, noise, z = cache["lv_raw"], cache["std"], cache["noise"], cache["z"]
        dq = np.atleast_2d(dq)

        grads = np.zeros(self.n_params)
        g = {}
        offset = 0
        for name, shape in self._shapes.items():
            size = int(np.prod(shape))
            g[name] = grads[offset : offset + size].reshape(shape)
            offset += size

        g["w_q"][...] = dq.T @ z
        g["b_q"][...] = dq.sum(axis=0)
        dz = dq @ v["w_q"]

        dmu = dz.copy()
        if dmu_extra is not None:
            dmu += dmu_extra
        dlv = dz * noise * 0.5 * std
        if dlv_extra is not None:
            dlv += dlv_extra
        # The clamp blocks gradient outside its range.
        dlv_raw = dlv * ((lv_raw > -LOGVAR_CLAMP) & (lv_raw < LOGVAR_CLAMP))

        g["w_mu"][...] = dmu.T @ h
        g["b_mu"][...] = dmu.sum(axis=0)
        g["w_lv"][...] = dlv_raw.T @ h
        g["b_lv"][...] = dlv_raw.sum(axis=0)

        dh = dmu @ v["w_mu"] + dlv_raw @ v["w_lv"]
        dpre = dh * (pre > 0.0)
        g["w_enc"][...] = dpre.T @ x
        g["b_enc"][...] = dpre.sum(axis=0)
        return grads


def training_loss(
    net: QNetwork,
    obs: np.ndarray,
    noise: np.ndarray,
    actions: np.ndarray,
    targets: np.ndarray,
    is_weights: np.ndarray,
    beta: float,
    with_grads: bool = True,
):
    """Evaluate the full training loss and (optionally) its flat gradient.

    The KL term is averaged over the batch, like the TD term, so both scale
    identically with batch size.
    """
    q, mu, lv, cache = net.forward(obs, noise)
    q2 = np.atleast_2d(q)
    mu2 = np.atleast_2d(mu)
    lv2 = np.atleast_2d(lv)
    n = len(q2)
    td, td_errors = td_loss(q2, actions, targets, is_weights)
    kl = float(np.mean(kl_standard_normal(mu2, lv2)))
    breakdown = total_loss(td, kl, beta)
    if not with_grads:
        return breakdown, td_errors, None

    dq = np.zeros_like(q2)
    w = np.asarray(is_weights, dtype=float)
    dq[np.arange(n), np.asarray(actions, dtype=np.int64)] = 2.0 * w * td_errors / n
    dmu_kl = beta * mu2 / n
    dlv_kl = beta * 0.5 * (np.exp(lv2) - 1.0) / n
    grads = net.backward(cache, dq, dmu_extra=dmu_kl, dlv_extra=dlv_kl)
    return breakdown, td_errors, grads


def make_loss_closure(obs, noise, actions, targets, is_weights, beta):
    """Freeze one batch into a ``loss_fn(net, with_grads)`` closure.

    Suitable for :func:`finite_diff_check`: the noise is fixed, so the loss
    is a deterministic function of the parameters alone.
    """

    def loss_fn(net: QNetwork, with_grads: bool):
        breakdown, _, grads = training_loss(
            net, obs, noise, actions, targets, is_weights, beta, with_grads
        )
        return breakdown.total, grads

    return loss_fn


def clip_grad_norm(grads: np.ndarray, max_norm: float = GRAD_CLIP_NORM) -> np.ndarray:
    """Scale the flat gradient down to a global L2 norm of ``max_norm``."""
    norm = float(np.linalg.norm(grads))
    if norm > max_norm:
        grads = grads * (max_norm / norm)
    return grads


@dataclass
class AdamState:
    """First/second moment accumulators and step counter for one net."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @staticmethod
    def for_params(params: np.ndarray) -> "AdamState":
        return AdamState(m=np.zeros_like(params), v=np.zeros_like(params))


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    lr: float = 0.0005,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> None:
    """One bias-corrected Adam update, in place."""
    if params.shape != grads.shape:
        raise ValueError("params/grads shape mismatch")
    state.t += 1
    state.m += (1.0 - beta1) * (grads - state.m)
    state.v += (1.0 - beta2) * (grads * grads - state.v)
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    params -= lr * m_hat / (np.sqrt(v_hat) + eps)


def finite_diff_check(net: QNetwork, loss_fn, delta: float = 1e-4) -> float:
    """Largest relative disagreement between backprop and central differences.

    ``loss_fn(net, with_grads)`` must return ``(loss, grads_or_None)`` and be
    a pure deterministic function of the parameters (fixed noise, fixed
    batch).  The relative error for each parameter is
    |analytic - numeric| / max(|numeric|, 1e-8).
    """
    _, analytic = loss_fn(net, True)
    params = net.params
    worst = 0.0
    for i in range(params.size):
        orig = params[i]
        params[i] = orig + delta
        loss_plus, _ = loss_fn(net, False)
        params[i] = orig - delta
        loss_minus, _ = loss_fn(net, False)
        params[i] = orig
        numeric = (loss_plus - loss_minus) / (2.0 * delta)
        rel = abs(analytic[i] - numeric) / max(abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst


def draw_gradcheck_obs(
    net: QNetwork,
    rng: np.random.Generator,
    batch: int = 1,
    delta: float = 1e-4,
    max_tries: int = 500,
) -> np.ndarray:
    """Sample observations at which finite differences are trustworthy.

    Central differences are only valid where the loss is smooth inside the
    +-delta parameter ball; a ReLU pre-activation (or a logvar sitting on
    its clamp boundary) within that ball makes the numeric derivative
    straddle a kink.  Rejection-sample observations until every hidden unit
    clears the hazard margin.
    """
    v = net._views
    margin = 30.0 * delta
    for _ in range(max_tries):
        obs = rng.uniform(-1.0, 1.0, size=(batch, net.obs_dim))
        pre = obs @ v["w_enc"].T + v["b_enc"]
        if np.abs(pre).min() <= margin:
            continue
        h = np.maximum(pre, 0.0)
        lv_raw = h @ v["w_lv"].T + v["b_lv"]
        if (np.abs(np.abs(lv_raw) - LOGVAR_CLAMP) <= margin).any():
            continue
        return obs if batch > 1 else obs[0]
    raise RuntimeError("could not find kink-free observations")


def save_checkpoint(net: QNetwork, path) -> None:
    """Write dims + the flat row-major parameter vector; bit-exact on reload."""
    np.savez(
        path,
        version=np.array([CHECKPOINT_VERSION]),
        dims=np.array(
            [net.obs_dim, net.n_actions, net.hidden_dim, net.bottleneck_dim]
        ),
        params=net.params,
    )


def load_checkpoint(path) -> QNetwork:
    with np.load(path) as data:
        version = int(data["version"][0])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        obs_dim, n_actions, hidden, bottleneck = (int(d) for d in data["dims"])
        net = QNetwork(obs_dim, n_actions, hidden, bottleneck)
        net.params[...] = data["params"]
    return net
