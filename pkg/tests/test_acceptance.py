"""Acceptance suite: every criterion as one test, printing PASS/FAIL lines.

Run with ``pytest tests/test_acceptance.py -s`` to see one line per
criterion.  Criteria 5-9 train full-length runs (five seeds for the three
message policies, plus the alphabet sweep) and dominate the runtime; the
training fixtures are shared module-wide and parallelized over local cores.
"""

import math
import time

import numpy as np
import pytest
from scipy.stats import chisquare

from sliceproto import nn
from sliceproto.agent import PrioritizedReplay, Transition
from sliceproto.attribution import greedy_value, shapley_sample
from sliceproto.comm import MessagePolicy
from sliceproto.env import ActionPair, SliceEnv
from sliceproto.nn import QNetwork, kl_standard_normal
from sliceproto.train import (
    RunConfig,
    latency_stats,
    run_many,
    run_training,
    sweep_alphabet,
    utilization_series,
    windowed_conflicts,
)

SEEDS = [0, 1, 2, 3, 4]
SWEEP_SEEDS = [0, 1, 2]
WORKERS = 2
POLICIES = ("emergent:3", "predefined", "silent")


def report(num: int, desc: str, passed: bool, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    print(f"\nACCEPTANCE {num:>2} {status}: {desc}" + (f"  [{detail}]" if detail else ""))
    assert passed, f"criterion {num} failed: {desc} {detail}"


def pooled_se(a: np.ndarray, b: np.ndarray) -> float:
    """Standard error of the difference of two means, pooled variance."""
    na, nb = len(a), len(b)
    sp2 = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2)
    return math.sqrt(sp2 * (1 / na + 1 / nb))


def pooled_std(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = len(a), len(b)
    sp2 = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2)
    return math.sqrt(sp2)


@pytest.fixture(scope="module")
def policy_results():
    cfg = RunConfig()
    return {
        policy: run_many(
            cfg.with_policy(MessagePolicy.parse(policy)), SEEDS, max_workers=WORKERS
        )
        for policy in POLICIES
    }


@pytest.fixture(scope="module")
def sweep_results():
    return sweep_alphabet(
        RunConfig(), sizes=("silent", "3", "8", "13"), seeds=SWEEP_SEEDS,
        max_workers=WORKERS,
    )


def test_01_gradient_correctness():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        net = QNetwork(8, 18, rng=np.random.default_rng(seed))
        rng = np.random.default_rng(10_000 + seed)
        obs = nn.draw_gradcheck_obs(net, rng)
        loss_fn = nn.make_loss_closure(
            obs,
            rng.standard_normal(net.bottleneck_dim),
            np.array([int(rng.integers(18))]),
            np.array([rng.standard_normal()]),
            np.array([1.0]),
            beta=0.05,
        )
        worst = max(worst, nn.finite_diff_check(net, loss_fn))
    elapsed = time.perf_counter() - t0
    report(
        1,
        "gradient check < 1e-4 over 100 random inits (KL + reparameterized paths)",
        worst < 1e-4 and elapsed < 60.0,
        f"worst={worst:.2e} runtime={elapsed:.1f}s",
    )


def test_02_kl_identities():
    exact_zero = kl_standard_normal(np.zeros(32), np.zeros(32)) == 0.0
    rng = np.random.default_rng(7)
    worst_rel = 0.0
    for _ in range(20):
        mu = rng.uniform(-1.5, 1.5, size=8)
        lv = rng.uniform(-1.0, 1.0, size=8)
        z = mu + np.exp(0.5 * lv) * rng.standard_normal((1_000_000, 8))
        log_q = -0.5 * (((z - mu) ** 2) / np.exp(lv) + lv + np.log(2 * np.pi)).sum(axis=1)
        log_p = -0.5 * (z**2 + np.log(2 * np.pi)).sum(axis=1)
        mc = float((log_q - log_p).mean())
        closed = float(kl_standard_normal(mu, lv))
        worst_rel = max(worst_rel, abs(closed - mc) / closed)
    report(
        2,
        "KL(0,0)=0 exactly; closed form matches 1e6-sample Monte Carlo within 1% on 20 pairs",
        exact_zero and worst_rel < 0.01,
        f"worst rel dev={worst_rel:.4f}",
    )


def test_03_per_sampling_law():
    rng = np.random.default_rng(11)
    n = 16
    replay = PrioritizedReplay(n, 2, alpha=0.6)
    for i in range(n):
        replay.store(Transition(np.zeros(2), 0, 0.0, np.zeros(2), False))
    priorities = rng.uniform(0.002, 1.0, n)  # uniform on (0, 1], clear of the floor
    replay.update_priorities(np.arange(n), priorities - 1e-3)  # update adds the floor back
    draws = np.concatenate(
        [replay.sample(n, beta_is=0.4, rng=rng)[0] for _ in range(100_000 // n + 1)]
    )[:100_000]
    counts = np.bincount(draws, minlength=n)
    expected = replay.prio_alpha[:n] / replay.prio_alpha[:n].sum() * len(draws)
    pvalue = chisquare(counts, expected).pvalue
    _, w = replay.sample(n, beta_is=0.0, rng=rng)
    report(
        3,
        "PER sampling matches p^0.6 law (chi-squared p > 0.01, 1e5 draws); beta_IS=0 gives unit weights",
        pvalue > 0.01 and (w == 1.0).all(),
        f"chi2 p={pvalue:.4f}",
    )


def test_04_environment_oracles():
    env = SliceEnv()
    env.reset(seed=17)
    rng = np.random.default_rng(23)
    cluster = env.cluster
    dt = cluster.step_ms / 1000.0
    ok = True
    offered_hist = [[] for _ in range(3)]
    drained_hist = [[] for _ in range(3)]
    backlog_final = np.zeros(3)
    for episode in range(10):
        if episode > 0:
            env.reset()
        for _ in range(env.steps_per_episode):
            before = [(s.t_backlog, s.c_backlog) for s in env.states]
            acts = [ActionPair(int(rng.integers(6)), int(rng.integers(3))) for _ in range(3)]
            out = env.step(acts)
            ok &= out.conflict == (out.requests_ghz.sum() > cluster.cpu_total)
            ok &= out.granted_ghz.sum() <= cluster.cpu_total * (1 + 1e-12)
            for i in range(3):
                tb0, cb0 = before[i]
                offered_bits = out.offered_mbps[i] * 1e6 * dt
                tb = tb0 + offered_bits
                drained = min(tb, out.radio_mbps[i] * 1e6 * dt)
                tb = tb - drained
                cb = cb0 + drained * cluster.cycles_per_bit
                cb = cb - min(cb, out.granted_ghz[i] * 1e9 * dt)
                ok &= env.states[i].t_backlog == tb
                ok &= env.states[i].c_backlog == cb
                if episode == 9:
                    offered_hist[i].append(offered_bits)
                    drained_hist[i].append(env.states[i].served_traffic * 1e6 * dt)
                    backlog_final[i] = env.states[i].t_backlog
    conservation = all(
        abs(math.fsum(drained_hist[i]) - (math.fsum(offered_hist[i]) - backlog_final[i]))
        <= 1e-9 * max(1.0, math.fsum(offered_hist[i]))
        for i in range(3)
    )
    report(
        4,
        "conflict flag equals brute-force re-sum; queue recurrence replays bit-exactly; "
        "bit conservation holds; granted never exceeds the 40 GHz pool",
        bool(ok and conservation),
    )


def _finals(results):
    return np.array([windowed_conflicts(r.train_log)[-1] for r in results])


def _firsts(results):
    return np.array([windowed_conflicts(r.train_log)[0] for r in results])


def test_05_conflict_reduction_trend(policy_results):
    results = policy_results["emergent:3"]
    finals = _finals(results)
    firsts = _firsts(results)
    slowest = max(r.wall_clock_s for r in results)
    passed = finals.mean() <= 0.5 and finals.mean() < firsts.mean() and slowest < 180
    report(
        5,
        "emergent final-window conflicts <= 0.5/episode and below the first window "
        "(5 seeds, each 500-episode run < 3 min)",
        passed,
        f"first={firsts.mean():.2f} final={finals.mean():.3f} slowest={slowest:.0f}s",
    )


def test_06_policy_ordering(policy_results):
    step = _finals(policy_results["emergent:3"])
    pre = _finals(policy_results["predefined"])
    sil = _finals(policy_results["silent"])
    gap1, se1 = pre.mean() - step.mean(), pooled_se(step, pre)
    gap2, se2 = sil.mean() - pre.mean(), pooled_se(pre, sil)
    passed = gap1 > se1 and gap2 > se2
    report(
        6,
        "final-window conflicts ordered emergent <= predefined <= silent, gaps > 1 pooled SE",
        passed,
        f"means {step.mean():.3f}/{pre.mean():.3f}/{sil.mean():.3f} "
        f"gap1={gap1:.3f}(se {se1:.3f}) gap2={gap2:.3f}(se {se2:.3f})",
    )


def _eval_latency(results):
    stats = [latency_stats(r.eval_log) for r in results]
    return (
        np.array([s[0] for s in stats]),
        np.array([s[1] for s in stats]),
    )


def test_07_latency_improvement(policy_results):
    step_med, step_iqr = _eval_latency(policy_results["emergent:3"])
    sil_med, sil_iqr = _eval_latency(policy_results["silent"])
    passed = step_med.mean() < sil_med.mean() and step_iqr.mean() < sil_iqr.mean()
    report(
        7,
        "frozen-policy evaluation: emergent median latency and IQR below the silent baseline",
        passed,
        f"median {step_med.mean():.2f} vs {sil_med.mean():.2f} ms; "
        f"IQR {step_iqr.mean():.2f} vs {sil_iqr.mean():.2f} ms",
    )


def test_08_utilization_band(policy_results):
    step_band = np.array(
        [utilization_series(r.eval_log)[1] for r in policy_results["emergent:3"]]
    )
    sil_band = np.array(
        [utilization_series(r.eval_log)[1] for r in policy_results["silent"]]
    )
    passed = step_band.mean() > sil_band.mean()
    report(
        8,
        "fraction of evaluation episodes with utilization inside [0.10, 0.90]: emergent > silent",
        passed,
        f"{step_band.mean():.3f} vs {sil_band.mean():.3f}",
    )


def test_09_alphabet_sweep(sweep_results):
    silent = sweep_results["silent"]
    em3 = sweep_results["3"]
    em8 = sweep_results["8"]
    em13 = sweep_results["13"]
    similar = abs(em8.mean() - em13.mean()) < pooled_std(em8, em13)
    passed = silent.mean() > em3.mean() and similar
    report(
        9,
        "tight-pool sweep: silent conflicts exceed emergent(3); sizes 8 and 13 quasi-similar",
        passed,
        f"silent={silent.mean():.2f} em3={em3.mean():.2f} "
        f"em8={em8.mean():.2f} em13={em13.mean():.2f} pooled std={pooled_std(em8, em13):.2f}",
    )


def test_10_shapley_properties():
    rng = np.random.default_rng(31)
    groups2 = [np.array([0]), np.array([1])]
    linear = shapley_sample(
        lambda x: 2.0 * x[0] + 3.0 * x[1], np.zeros(2), np.ones(2), groups2, 2000, rng
    )
    linear_ok = np.allclose(linear, [2.0, 3.0], atol=1e-12)

    net = QNetwork(4, 6, rng=rng)
    net.view("w_enc")[:, 2] = 0.0  # provably ignored feature
    f = greedy_value(net)
    groups4 = [np.array([i]) for i in range(4)]
    baseline, target = rng.standard_normal(4), rng.standard_normal(4)
    attr = shapley_sample(f, baseline, target, groups4, 2000, rng)
    dummy_ok = attr[2] == 0.0
    # Per-permutation contributions telescope, so the efficiency residual is
    # pure float roundoff; 3 Monte Carlo standard errors of an exact sum is 0.
    residual = abs(attr.sum() - (f(target) - f(baseline)))
    efficiency_ok = residual <= 1e-9
    report(
        10,
        "Shapley: linear exactness; dummy feature attribution exactly 0; "
        "efficiency identity at 2000 permutations",
        bool(linear_ok and dummy_ok and efficiency_ok),
        f"linear={np.round(linear, 6)} dummy={attr[2]} residual={residual:.2e}",
    )


def test_11_determinism(tmp_path):
    cfg = RunConfig(episodes=30, eval_episodes=5)
    files = []
    for tag in ("a", "b"):
        result = run_training(cfg, seed=9)
        path = tmp_path / f"metrics_{tag}.csv"
        result.train_log.to_csv(path)
        files.append(path.read_bytes())
    report(
        11,
        "identical (config, seed) produce bit-identical metrics files",
        files[0] == files[1],
        f"{len(files[0])} bytes",
    )
