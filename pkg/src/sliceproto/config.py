"""Flat key-value configuration files.

The on-disk format is one ``key = value`` pair per line, ``#`` comments,
comma-separated lists for per-slice values.  The exporter emits a canonical
layout in which every constant is tagged ``[paper]`` (published experiment
value) or ``[decision]`` (implementation default); exporting, parsing and
re-exporting is byte-identical.
"""

from __future__ import annotations

from pathlib import Path

from .agent import AgentConfig
from .comm import MessagePolicy
from .env import ClusterSpec, RewardConfig, SliceSpec
from .train import RunConfig


class ConfigError(ValueError):
    """Unparseable or inconsistent configuration."""


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt(v) for v in value)
    return str(value)


# key -> (type, tag, description); order defines the canonical file layout.
# type is one of: "float", "int", "str", "floats", "strs".
SCHEMA: dict[str, tuple[str, str, str]] = {
    "service_classes": ("strs", "paper", "slice service types"),
    "shares_ghz": ("floats", "paper", "default CPU share per slice"),
    "traffic_mean_mbps": ("floats", "paper", "mean offered traffic per slice"),
    "traffic_std_mbps": ("floats", "paper", "traffic standard deviation per slice"),
    "radio_nominal_mbps": ("floats", "decision", "nominal radio capacity, 2x mean traffic"),
    "cpu_total_ghz": ("float", "paper", "shared pool = sum of shares"),
    "cycles_per_bit": ("float", "decision", "compute cost of one transmitted bit"),
    "step_ms": ("float", "decision", "simulation step duration"),
    "latency_cap_ms": ("float", "decision", "per-queue latency cap"),
    "radio_fluct_low": ("float", "decision", "radio multiplier lower bound"),
    "radio_fluct_high": ("float", "decision", "radio multiplier upper bound"),
    "traffic_phi": ("float", "decision", "lag-1 autocorrelation of log traffic"),
    "latency_ref_ms": ("float", "decision", "latency scale of the reward exponential"),
    "conflict_penalty": ("float", "decision", "reward penalty per conflicted step"),
    "underutil_penalty": ("float", "decision", "reward penalty below the utilization floor"),
    "underutil_threshold": ("float", "decision", "utilization floor of the reward"),
    "overutil_penalty": ("float", "decision", "reward penalty above the utilization ceiling"),
    "overutil_threshold": ("float", "decision", "utilization ceiling of the reward"),
    "gamma": ("float", "paper", "discount factor"),
    "learning_rate": ("float", "paper", "Adam learning rate"),
    "batch_size": ("int", "paper", "replay batch size"),
    "epsilon_start": ("float", "decision", "initial exploration rate"),
    "epsilon_decay": ("float", "decision", "per-episode epsilon multiplier"),
    "epsilon_floor": ("float", "decision", "minimum epsilon"),
    "beta_start": ("float", "paper", "initial KL coefficient"),
    "beta_anneal_rate": ("float", "decision", "KL coefficient increase per episode; published rate 0.001"),
    "per_alpha": ("float", "decision", "replay priority exponent"),
    "per_beta_is_start": ("float", "decision", "initial importance-sampling exponent"),
    "per_beta_is_end": ("float", "decision", "final importance-sampling exponent"),
    "target_sync_period": ("int", "decision", "learn steps between target syncs"),
    "replay_capacity": ("int", "decision", "replay ring-buffer size"),
    "q_init_optimism": ("float", "decision", "initial Q-head bias for optimistic exploration"),
    "hidden_dim": ("int", "paper", "encoder width"),
    "bottleneck_dim": ("int", "paper", "stochastic bottleneck width"),
    "episodes": ("int", "paper", "training episodes"),
    "steps_per_episode": ("int", "paper", "steps per episode"),
    "eval_episodes": ("int", "decision", "frozen-policy evaluation episodes"),
    "comm_policy": ("str", "decision", "emergent:<k> | predefined | silent"),
}

_HEADER = (
    "# sliceproto run configuration\n"
    "# format: key = value; '#' starts a comment; lists are comma-separated\n"
)


def run_config_to_flat(config: RunConfig) -> dict[str, object]:
    """Flatten a RunConfig into the documented key-value mapping."""
    cluster, reward, agent = config.cluster, config.reward, config.agent
    return {
        "service_classes": [s.service_class for s in cluster.slices],
        "shares_ghz": [s.cpu_share for s in cluster.slices],
        "traffic_mean_mbps": [s.traffic_mean for s in cluster.slices],
        "traffic_std_mbps": [s.traffic_std for s in cluster.slices],
        "radio_nominal_mbps": [s.radio_nominal for s in cluster.slices],
        "cpu_total_ghz": cluster.cpu_total,
        "cycles_per_bit": cluster.cycles_per_bit,
        "step_ms": cluster.step_ms,
        "latency_cap_ms": cluster.latency_cap_ms,
        "radio_fluct_low": cluster.radio_fluct_low,
        "radio_fluct_high": cluster.radio_fluct_high,
        "traffic_phi": cluster.traffic_phi,
        "latency_ref_ms": reward.latency_ref_ms,
        "conflict_penalty": reward.conflict_penalty,
        "underutil_penalty": reward.underutil_penalty,
        "underutil_threshold": reward.underutil_threshold,
        "overutil_penalty": reward.overutil_penalty,
        "overutil_threshold": reward.overutil_threshold,
        "gamma": agent.gamma,
        "learning_rate": agent.lr,
        "batch_size": agent.batch_size,
        "epsilon_start": agent.epsilon_start,
        "epsilon_decay": agent.epsilon_decay,
        "epsilon_floor": agent.epsilon_floor,
        "beta_start": agent.beta_start,
        "beta_anneal_rate": agent.beta_anneal_rate,
        "per_alpha": agent.per_alpha,
        "per_beta_is_start": agent.per_beta_is_start,
        "per_beta_is_end": agent.per_beta_is_end,
        "target_sync_period": agent.target_sync_period,
        "replay_capacity": agent.replay_capacity,
        "q_init_optimism": agent.q_init_optimism,
        "hidden_dim": agent.hidden_dim,
        "bottleneck_dim": agent.bottleneck_dim,
        "episodes": config.episodes,
        "steps_per_episode": config.steps_per_episode,
        "eval_episodes": config.eval_episodes,
        "comm_policy": config.policy.name,
    }


def flat_to_run_config(values: dict[str, object]) -> RunConfig:
    """Build a RunConfig from a flat mapping, validating slice-list lengths."""
    lists = [
        values["service_classes"],
        values["shares_ghz"],
        values["traffic_mean_mbps"],
        values["traffic_std_mbps"],
        values["radio_nominal_mbps"],
    ]
    n = len(lists[0])
    if any(len(x) != n for x in lists):
        raise ConfigError("per-slice lists must all have the same length")
    slices = tuple(
        SliceSpec(
            id=i,
            service_class=values["service_classes"][i],
            traffic_mean=values["traffic_mean_mbps"][i],
            traffic_std=values["traffic_std_mbps"][i],
            cpu_share=values["shares_ghz"][i],
            radio_nominal=values["radio_nominal_mbps"][i],
        )
        for i in range(n)
    )
    cluster = ClusterSpec(
        slices=slices,
        cpu_total=values["cpu_total_ghz"],
        cycles_per_bit=values["cycles_per_bit"],
        step_ms=values["step_ms"],
        latency_cap_ms=values["latency_cap_ms"],
        radio_fluct_low=values["radio_fluct_low"],
        radio_fluct_high=values["radio_fluct_high"],
        traffic_phi=values["traffic_phi"],
    )
    reward = RewardConfig(
        latency_ref_ms=values["latency_ref_ms"],
        conflict_penalty=values["conflict_penalty"],
        underutil_penalty=values["underutil_penalty"],
        underutil_threshold=values["underutil_threshold"],
        overutil_penalty=values["overutil_penalty"],
        overutil_threshold=values["overutil_threshold"],
    )
    agent = AgentConfig(
        gamma=values["gamma"],
        lr=values["learning_rate"],
        batch_size=values["batch_size"],
        epsilon_start=values["epsilon_start"],
        epsilon_decay=values["epsilon_decay"],
        epsilon_floor=values["epsilon_floor"],
        beta_start=values["beta_start"],
        beta_anneal_rate=values["beta_anneal_rate"],
        per_alpha=values["per_alpha"],
        per_beta_is_start=values["per_beta_is_start"],
        per_beta_is_end=values["per_beta_is_end"],
        target_sync_period=values["target_sync_period"],
        replay_capacity=values["replay_capacity"],
        q_init_optimism=values["q_init_optimism"],
        hidden_dim=values["hidden_dim"],
        bottleneck_dim=values["bottleneck_dim"],
    )
    try:
        policy = MessagePolicy.parse(values["comm_policy"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(
        episodes=values["episodes"],
        steps_per_episode=values["steps_per_episode"],
        eval_episodes=values["eval_episodes"],
        policy=policy,
        agent=agent,
        cluster=cluster,
        reward=reward,
    )


def format_config(config: RunConfig) -> str:
    """Canonical text form of a RunConfig."""
    values = run_config_to_flat(config)
    lines = [_HEADER]
    for key, (_, tag, desc) in SCHEMA.items():
        lines.append(f"{key} = {_fmt(values[key])}  # [{tag}] {desc}")
    return "\n".join(lines) + "\n"


def write_config(path, config: RunConfig) -> None:
    Path(path).write_text(format_config(config))


def _parse_value(kind: str, raw: str, line_no: int):
    try:
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw)
        if kind == "floats":
            return [float(v) for v in raw.split(",")]
        if kind == "strs":
            return [v.strip() for v in raw.split(",")]
        return raw
    except ValueError as exc:
        raise ConfigError(f"line {line_no}: cannot parse {raw!r} as {kind}") from exc


def parse_config_text(text: str) -> RunConfig:
    """Parse flat key-value config text; unknown keys and bad values error
    with their line number, unspecified keys take the package defaults."""
    values = run_config_to_flat(RunConfig())
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        values[key] = _parse_value(SCHEMA[key][0], raw, line_no)
    try:
        return flat_to_run_config(values)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def read_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text())
