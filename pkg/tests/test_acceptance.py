"""Acceptance checks, one test per criterion.

Each test reports a single ``criterion N [PASS|FAIL] ...`` line (collected in
the "acceptance criteria" section of the pytest summary) and asserts it.
Runtime budgets are part of each check.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from sdec import spectral_features as sf
from sdec.baselines import EnergySwingup, LinearQuadraticProblem, ilqr_solve
from sdec.bench import build_feature_map, decay_bench_rows, loglog_slopes, train_rows
from sdec.cli import main
from sdec.config import BenchSettings, FeatureSettings, parse_config
from sdec.envs import Pendulum
from sdec.oracles import random_tabular_mdp, riccati_finite_horizon, tabular_policy_q, tabular_policy_v, value_iteration
from sdec.policy_eval import LspeConfig, TabularOneHot, lspe, lspe_exact_tabular, sample_tabular_batch
from sdec.policy_opt import TrainConfig, evaluate_policy, make_policy, sdec_train

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def random_policy(S, A, rng):
    p = rng.random((S, A)) + 0.1
    return p / p.sum(1, keepdims=True)


def test_criterion_01_factorization(acceptance):
    rng = np.random.default_rng(1)
    worst = 0.0
    with Timer() as t:
        for _ in range(1000):
            d = int(rng.choice([1, 2, 4]))
            p = sf.KernelParams(rng.uniform(0.5, 2.0), rng.uniform(0.1, 0.9), d)
            f, s = rng.normal(size=d), rng.normal(size=d)
            prod = np.prod(sf.factorization_factors(p, f, s))
            target = math.exp(-np.sum((s - f) ** 2) / (2 * p.sigma**2))
            worst = max(worst, abs(prod - target) / target)
    acceptance.check(1, "factorization identity", worst <= 1e-10 and t.seconds < 1,
                     f"max rel err {worst:.2e} (<= 1e-10), {t.seconds:.2f}s (< 1s)")


def test_criterion_02_rff_accuracy(acceptance):
    rng = np.random.default_rng(2)
    p = sf.KernelParams(1.0, 0.0, 2)
    with Timer() as t:
        fmap = sf.sample_random_features(p, 4096, rng=rng)
        xs, ys = rng.normal(size=(200, 2)), rng.normal(size=(200, 2))
        err = np.abs(sf.rf_kernel_estimate(fmap, xs, ys) - sf.k_alpha(p, xs, ys))
    frac, mean = float(np.mean(err <= 0.08)), float(err.mean())
    acceptance.check(2, "RFF kernel accuracy", frac >= 0.95 and mean <= 0.03 and t.seconds < 5,
                     f"{frac:.1%} within 0.08 (>= 95%), mean {mean:.4f} (<= 0.03), {t.seconds:.2f}s (< 5s)")


def test_criterion_03_nystrom_exactness(acceptance):
    p = sf.KernelParams(1.0, 0.5, 2)
    with Timer() as t:
        X = sf.sample_landmarks(p, 64, rng=3)
        fmap, _ = sf.build_nystrom(p, X, 64)
        khat = sf.nystrom_kernel_estimate(fmap, X[:, None, :], X[None, :, :])
        recon = float(np.max(np.abs(khat - sf.gram_matrix(p, X))))
        err = sf.kernel_approx_error(fmap, p, X)
    acceptance.check(3, "Nystrom exactness", recon <= 1e-8 and err <= 1e-4 and t.seconds < 1,
                     f"Gram reconstruction {recon:.1e} (<= 1e-8), approx error {err:.1e} (<= 1e-4), "
                     f"{t.seconds:.2f}s (< 1s)")


def test_criterion_04_rate_separation(acceptance):
    bs = BenchSettings(methods=["nystrom", "rff"], d=1, sigma=1.0, alpha=0.5, ms=[16, 32, 64, 128, 256], seeds=20,
                       measure="gaussian-p-alpha")
    with Timer() as t:
        rows = decay_bench_rows(bs, master_seed=4)
    nys = float(np.median(loglog_slopes(rows, "nystrom")))
    rff = float(np.median(loglog_slopes(rows, "rff")))
    ok = nys <= -0.9 and -0.65 <= rff <= -0.35 and t.seconds < 120
    acceptance.check(4, "rate separation", ok,
                     f"Nystrom slope {nys:.2f} (<= -0.9), RFF slope {rff:.2f} (in [-0.65, -0.35]), "
                     f"{t.seconds:.1f}s (< 120s)")


@pytest.fixture(scope="module")
def testbed():
    rng = np.random.default_rng(5)
    mdp = random_tabular_mdp(6, 3, 0.9, rng)
    return mdp, random_policy(6, 3, rng)


def test_criterion_05_lspe_oracle(acceptance, testbed):
    mdp, pi = testbed
    with Timer() as t:
        qw = lspe_exact_tabular(mdp, pi, LspeConfig(T=300, gamma=0.9))
    err = float(np.max(np.abs(qw.w.reshape(6, 3) - tabular_policy_q(mdp, pi))))
    acceptance.check(5, "LSPE oracle equivalence", err <= 1e-6 and t.seconds < 1,
                     f"sup error {err:.1e} (<= 1e-6), {t.seconds:.2f}s (< 1s)")


def test_criterion_06_statistical_decay(acceptance, testbed):
    mdp, pi = testbed
    cfg = LspeConfig(T=300, gamma=0.9)
    with Timer() as t:
        target = lspe_exact_tabular(mdp, pi, cfg).w
        errs = np.empty((3, 10))
        for i, n in enumerate((10**3, 10**4, 10**5)):
            for seed in range(10):
                batch = sample_tabular_batch(mdp, pi, n, rng=np.random.default_rng([6, i, seed]))
                errs[i, seed] = np.max(np.abs(lspe(batch, TabularOneHot(6, 3), None, cfg).w - target))
    med = np.median(errs, axis=1)
    ratios = med[:-1] / med[1:]
    lo, hi = math.sqrt(10) / 2, 2 * math.sqrt(10)
    ok = bool(np.all((ratios >= lo) & (ratios <= hi))) and t.seconds < 60
    acceptance.check(6, "statistical-error decay", ok,
                     f"median errors {np.array2string(med, precision=4)}, ratios "
                     f"{np.array2string(ratios, precision=2)} (in [{lo:.2f}, {hi:.2f}]), {t.seconds:.1f}s (< 60s)")


def test_criterion_07_npg_optimality(acceptance):
    gaps_by_seed = []
    with Timer() as t:
        for seed in range(3):
            mdp = random_tabular_mdp(4, 2, 0.9, np.random.default_rng([7, seed]))
            _, v_star = value_iteration(mdp)
            gaps = []
            cfg = TrainConfig(K=500, eta_scale=1000.0, eval_every=500, eval_episodes=1, exact=True,
                              lspe=LspeConfig(T=300, gamma=0.9))
            sdec_train(mdp, TabularOneHot(4, 2), cfg,
                       callback=lambda k, pol: gaps.append(np.max(v_star - tabular_policy_v(mdp, pol.table()))))
            gaps_by_seed.append(min(gaps))
    worst = max(gaps_by_seed)
    acceptance.check(7, "NPG optimality", worst <= 1e-3 and t.seconds < 30,
                     f"min gap over k<500, worst of 3 MDPs {worst:.1e} (<= 1e-3), {t.seconds:.1f}s (< 30s)")


def test_criterion_10_energy_baseline(acceptance):
    env = Pendulum()
    ctl = EnergySwingup(env)
    with Timer() as t:
        s = np.array([math.pi, 0.0])
        reached = None
        for step in range(int(round(10 / env.dt)) + 1):
            if abs(s[0]) <= 0.2 and abs(s[1]) <= 1.0:
                reached = step * env.dt
                break
            s = env.f_eval(s, ctl(s))
    ok = reached is not None and t.seconds < 1
    acceptance.check(10, "energy swing-up", ok, f"upright reached at {reached} s (<= 10 s), {t.seconds:.2f}s (< 1s)")


def test_criterion_11_ilqr(acceptance):
    A = np.array([[1.0, 0.1], [0.0, 1.0]])
    B = np.array([[0.005], [0.1]])
    Q, R = np.diag([1.0, 0.2]), np.array([[0.05]])
    env = Pendulum()
    with Timer() as t:
        lq = ilqr_solve(LinearQuadraticProblem(A, B, Q, R), np.array([1.0, -0.5]), 40, max_iters=1)
        gains, _ = riccati_finite_horizon(A, B, Q, R, 40, Q)
        gain_err = float(np.max(np.abs(lq.feedback_gains + gains)))
        swing = ilqr_solve(env, env.init_center, env.horizon, max_iters=50)
    costs = np.array(swing.cost_per_iteration)
    monotone = bool(np.all(np.diff(costs) <= 0))
    ok = gain_err <= 1e-6 and lq.accepted == 1 and monotone and t.seconds < 30
    acceptance.check(11, "iLQR correctness", ok,
                     f"LQ gain error {gain_err:.1e} after 1 iteration (<= 1e-6); pendulum cost "
                     f"{costs[0]:.1f} -> {costs[-1]:.1f} over {len(costs) - 1} accepted iterations, "
                     f"non-increasing={monotone}; {t.seconds:.1f}s (< 30s)")


def test_criterion_12_reproducibility(acceptance, tmp_path):
    configs = {
        "features-bench": {"bench": {"ms": [8, 16], "seeds": 2, "n_eval": 20}},
        "decay-bench": {"bench": {"ms": [8, 16], "seeds": 2, "n_eval": 20}},
        "train": {"features": {"m": 16}, "train": {"K": 2, "n": 100, "eval_every": 1, "eval_episodes": 2,
                                                   "burn_in": 0, "n_chains": 5, "eta": 0.1, "ridge": 1.0, "T": 10}},
        "eval-baseline": {"env_params": {"horizon": 40}, "baseline": {"episodes": 2, "ilqr_iters": 3}},
        "diagnostics": {"features": {"m": 16}, "train": {"n": 100, "burn_in": 0, "n_chains": 5}},
    }
    same = {}
    for command, extra in configs.items():
        path = tmp_path / f"{command}.json"
        path.write_text(json.dumps({"command": command, "seed": 12, **extra}))
        outs = []
        for run in ("first", "second"):
            code = main(["--config", str(path), "--out", str(tmp_path / run)])
            outs.append((code, (tmp_path / run / f"{command}.csv").read_bytes()))
        same[command] = outs[0][0] == outs[1][0] == 0 and outs[0][1] == outs[1][1]
    acceptance.check(12, "reproducibility", all(same.values()),
                     ", ".join(f"{k}: {'identical' if v else 'DIFFERENT'}" for k, v in same.items()))


def load_train_config(name, m, seed):
    cfg = parse_config((CONFIGS / name).read_text())
    return cfg.model_copy(update={"seed": seed, "features": cfg.features.model_copy(update={"m": m})})


def final_reward(name, m, seed):
    rows, _ = train_rows(load_train_config(name, m, seed))
    return rows[0][1], rows[-1][1]


@pytest.mark.slow
def test_criterion_08_feature_dimension(acceptance):
    seeds = range(3)
    with Timer() as t:
        rff = {m: float(np.median([final_reward("pendulum_sdec_rff.json", m, s)[1] for s in seeds]))
               for m in (64, 256, 1024)}
        nys = float(np.median([final_reward("pendulum_sdec_nystrom.json", 256, s)[1] for s in seeds]))
    monotone = rff[64] <= rff[256] <= rff[1024]
    ok = monotone and nys >= rff[256] and t.seconds < 1800
    acceptance.check(8, "feature-dimension monotonicity", ok,
                     "median final reward RFF " + ", ".join(f"m={m}: {v:.0f}" for m, v in rff.items())
                     + f" (non-decreasing={monotone}); Nystrom m=256: {nys:.0f} (>= RFF m=256); "
                     f"{t.seconds / 60:.1f} min (< 30 min)")


@pytest.mark.slow
def test_criterion_09_end_to_end_pendulum(acceptance):
    with Timer() as t:
        first, last = final_reward("pendulum_sdec_rff.json", 512, 0)
    ok = last >= -500 and last >= first / 2 and t.seconds < 900
    acceptance.check(9, "end-to-end pendulum", ok,
                     f"uniform policy {first:.0f} -> final {last:.0f} (>= -500, improvement x{first / last:.2f} >= 2), "
                     f"{t.seconds:.0f}s (< 900s)")
