"""Command-line front end.

Subcommands: train, evaluate, compare, sweep-alphabet, attribute,
export-defaults.  Exit codes: 0 success, 1 usage error, 2 config error,
3 runtime error.  All randomness flows from --seed; outputs are per-seed
files, so repeated invocations with the same arguments reproduce byte-
identical metrics.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import attribution as attr_mod
from . import charts
from .agent import Agent
from .comm import MessagePolicy
from .config import ConfigError, read_config, write_config
from .train import (
    DEFAULT_SWEEP_SIZES,
    ExperimentResult,
    MetricsLog,
    RunConfig,
    collect_eval_observations,
    final_window_conflicts,
    latency_stats,
    run_evaluation,
    run_experiment,
    summary_dict,
    sweep_alphabet,
    utilization_series,
    windowed_conflicts,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems instead of exiting with code 2."""

    def error(self, message):
        raise UsageError(message)


def _slug(policy_name: str) -> str:
    return policy_name.replace(":", "-")


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"bad seed list {text!r}") from exc


def _load_run_config(args) -> RunConfig:
    config = read_config(args.config) if args.config else RunConfig()
    if getattr(args, "policy", None):
        try:
            config = config.with_policy(MessagePolicy.parse(args.policy))
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    return config


def _metrics_path(out: Path, kind: str, policy: str, seed: int) -> Path:
    return out / f"{kind}_{_slug(policy)}_seed{seed}.csv"


def _checkpoint_path(out: Path, policy: str, seed: int, agent_id: int) -> Path:
    return out / f"agent{agent_id}_{_slug(policy)}_seed{seed}.npz"


def _write_run_artifacts(out: Path, config: RunConfig, result: ExperimentResult):
    name = result.policy_name
    result.train_log.to_csv(_metrics_path(out, "train", name, result.seed))
    if result.eval_log is not None:
        result.eval_log.to_csv(_metrics_path(out, "eval", name, result.seed))
    if result.agents:
        cfg = config.agent
        last = config.episodes - 1
        for agent in result.agents:
            agent.save(
                _checkpoint_path(out, name, result.seed, agent.agent_id),
                episode=last,
                epsilon=cfg.epsilon_at(last),
                beta=cfg.beta_at(last),
                beta_is=cfg.per_beta_is_at(last, config.episodes),
            )
    summary = summary_dict(config, result)
    path = out / f"summary_{_slug(name)}_seed{result.seed}.json"
    path.write_text(json.dumps(summary, indent=2) + "\n")


def _load_agents(out: Path, config: RunConfig, seed: int) -> list[Agent]:
    root = np.random.SeedSequence(seed)
    seqs = root.spawn(1 + config.cluster.n_slices)
    agents = []
    for i in range(config.cluster.n_slices):
        path = _checkpoint_path(out, config.policy.name, seed, i)
        if not path.exists():
            raise FileNotFoundError(f"missing checkpoint: {path}")
        agent, _ = Agent.load(path, config.policy, config.agent, seqs[1 + i])
        agents.append(agent)
    return agents


def cmd_train(args) -> int:
    config = _load_run_config(args)
    seeds = _parse_seeds(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    finals = []
    for seed in seeds:
        result = run_experiment(config, seed)
        _write_run_artifacts(out, config, result)
        final = final_window_conflicts(result.train_log)
        finals.append(final)
        print(
            f"policy={result.policy_name} seed={seed} "
            f"final-window conflicts/episode={final:.3f} "
            f"({result.wall_clock_s:.1f}s)"
        )
    print(f"mean final-window conflicts/episode: {np.mean(finals):.3f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _load_run_config(args)
    seeds = _parse_seeds(args.seed)
    out = Path(args.out)
    for seed in seeds:
        agents = _load_agents(out, config, seed)
        log = run_evaluation(agents, config, seed, episodes=args.episodes)
        log.to_csv(_metrics_path(out, "eval", config.policy.name, seed))
        median, iqr, _ = latency_stats(log)
        _, in_band = utilization_series(log)
        print(
            f"policy={config.policy.name} seed={seed} "
            f"latency median={median:.3f}ms iqr={iqr:.3f}ms "
            f"util-in-band={in_band:.3f} "
            f"conflicts/episode={log.conflicts_per_episode().mean():.3f}"
        )
    return EXIT_OK


def _policy_metrics(out: Path, config: RunConfig, seed: int):
    """Reuse metrics files when present, otherwise train in-line."""
    name = config.policy.name
    train_path = _metrics_path(out, "train", name, seed)
    eval_path = _metrics_path(out, "eval", name, seed)
    if train_path.exists() and eval_path.exists():
        return MetricsLog.from_csv(train_path), MetricsLog.from_csv(eval_path)
    result = run_experiment(config, seed)
    _write_run_artifacts(out, config, result)
    return result.train_log, result.eval_log


def cmd_compare(args) -> int:
    config = _load_run_config(args)
    seeds = _parse_seeds(args.seed)
    policies = [MessagePolicy.parse(p) for p in args.policies.split(",")]
    if len(policies) < 2:
        print("warning: single policy, comparison table is degenerate", file=sys.stderr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    window_series = {}
    for policy in policies:
        pconf = config.with_policy(policy)
        conflicts, medians, iqrs, bands = [], [], [], []
        windows_all = []
        for seed in seeds:
            train_log, eval_log = _policy_metrics(out, pconf, seed)
            conflicts.append(final_window_conflicts(train_log))
            windows_all.append(windowed_conflicts(train_log))
            median, iqr, _ = latency_stats(eval_log)
            _, in_band = utilization_series(eval_log)
            medians.append(median)
            iqrs.append(iqr)
            bands.append(in_band)
        rows.append(
            {
                "policy": policy.name,
                "final_conflicts_mean": float(np.mean(conflicts)),
                "final_conflicts_std": float(np.std(conflicts, ddof=1))
                if len(conflicts) > 1
                else 0.0,
                "latency_median_ms": float(np.mean(medians)),
                "latency_iqr_ms": float(np.mean(iqrs)),
                "util_in_band": float(np.mean(bands)),
            }
        )
        mean_windows = np.mean(np.stack(windows_all), axis=0)
        window_series[policy.name] = (
            np.arange(1, len(mean_windows) + 1) * 100.0,
            mean_windows,
        )

    header = f"{'policy':<14} {'conflicts':>12} {'median ms':>10} {'iqr ms':>8} {'in-band':>8}"
    print(header)
    for row in rows:
        print(
            f"{row['policy']:<14} "
            f"{row['final_conflicts_mean']:>7.3f}±{row['final_conflicts_std']:<4.2f} "
            f"{row['latency_median_ms']:>10.3f} "
            f"{row['latency_iqr_ms']:>8.3f} "
            f"{row['util_in_band']:>8.3f}"
        )
    table_path = out / "comparison.csv"
    with open(table_path, "w") as fh:
        cols = list(rows[0].keys())
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(str(row[c]) for c in cols) + "\n")
    if args.svg:
        charts.write_line_chart(
            out / "conflict_windows.svg",
            window_series,
            "Mean conflicts per episode by 100-episode window",
            "episode",
            "conflicts/episode",
        )
    return EXIT_OK


def cmd_sweep_alphabet(args) -> int:
    config = _load_run_config(args)
    seeds = _parse_seeds(args.seed)
    sizes = [s.strip() for s in args.sizes.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = sweep_alphabet(config, sizes, seeds)
    path = out / "alphabet_sweep.csv"
    with open(path, "w") as fh:
        fh.write("size,seed,final_window_conflicts\n")
        for size, values in summary.items():
            for seed, v in zip(seeds, values):
                fh.write(f"{size},{seed},{v!r}\n")
    print(f"{'size':<8} {'conflicts (mean ± std over seeds)'}")
    for size, values in summary.items():
        std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        print(f"{size:<8} {np.mean(values):.3f} ± {std:.3f}")
    return EXIT_OK


def cmd_attribute(args) -> int:
    config = _load_run_config(args)
    seeds = _parse_seeds(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = seeds[0]
    try:
        agents = _load_agents(out, config, seed)
    except FileNotFoundError:
        result = run_experiment(config, seed)
        _write_run_artifacts(out, config, result)
        agents = result.agents
    obs = collect_eval_observations(
        agents, config, seed, episodes=args.episodes, agent_id=args.agent
    )
    attr_cfg = attr_mod.AttributionConfig(
        n_permutations=args.permutations, seed=seed
    )
    attributions = attr_mod.attribute_dataset(
        agents[args.agent].net, obs, config.policy, attr_cfg
    )
    path = out / f"attributions_agent{args.agent}_{_slug(config.policy.name)}_seed{seed}.csv"
    attr_mod.write_attributions_csv(path, attributions)
    for name, values in attributions.items():
        print(f"{name:<12} mean={values.mean():+.4f} std={values.std():.4f}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_export_defaults(args) -> int:
    path = Path(args.out)
    if path.is_dir():
        path = path / "defaults.cfg"
    write_config(path, RunConfig())
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="sliceproto", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeds_default="0"):
        p.add_argument("--config", help="flat key-value config file")
        p.add_argument("--seed", default=seeds_default, help="comma-separated seeds")
        p.add_argument("--out", default="runs", help="output directory")
        p.add_argument(
            "--policy", help="emergent:<k> | predefined | silent (overrides config)"
        )

    p = sub.add_parser("train", help="train agents and write metrics/checkpoints")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="frozen-policy evaluation from checkpoints")
    common(p)
    p.add_argument("--episodes", type=int, default=None, help="evaluation episodes")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="summary table across message policies")
    common(p)
    p.add_argument(
        "--policies",
        default="emergent:3,predefined,silent",
        help="comma-separated policies to compare",
    )
    p.add_argument("--svg", action="store_true", help="also write an SVG chart")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep-alphabet", help="alphabet-size sweep under a tight pool")
    common(p)
    p.add_argument(
        "--sizes", default=",".join(DEFAULT_SWEEP_SIZES), help="sizes, e.g. silent,3,8,13"
    )
    p.set_defaults(func=cmd_sweep_alphabet)

    p = sub.add_parser("attribute", help="Shapley attributions of a trained network")
    common(p)
    p.add_argument("--agent", type=int, default=2, help="agent to explain")
    p.add_argument("--episodes", type=int, default=10, help="episodes of observations")
    p.add_argument("--permutations", type=int, default=2000)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("export-defaults", help="write the canonical default config")
    p.add_argument("--out", default="defaults.cfg", help="target file or directory")
    p.set_defaults(func=cmd_export_defaults)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
