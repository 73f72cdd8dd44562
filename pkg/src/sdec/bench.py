"""Experiment drivers behind the command-line interface.

Each driver turns a validated :class:`~sdec.config.RunConfig` into a header
and a list of rows. All randomness comes from labelled streams of the master
seed, so equal configurations give equal rows.
"""

from __future__ import annotations

import math
import time

import numpy as np

from .baselines import EnergySwingup, IlqrPolicy, ilqr_solve, run_baseline
from .config import BenchSettings, FeatureSettings, RunConfig
from .envs import ConstantPolicy, EnvModel, Pendulum, collect_stationary_batch, make_env
from .errors import ContractError
from .policy_eval import LspeConfig, embed_state, embedded_dim, env_feature_map, regularity_diagnostics
from .policy_opt import TrainConfig, default_eta, feature_g_tilde, make_policy, sdec_train
from .seeding import derive_rng
from .spectral_features import (
    GAUSSIAN_P_ALPHA,
    PAIRED_TRIG,
    PHASE_SHIFTED,
    UNIFORM_BOX,
    KernelParams,
    build_nystrom,
    effective_rank,
    kernel_approx_error,
    k_alpha,
    nystrom_kernel_estimate,
    pairwise_kernel_error,
    rf_kernel_estimate,
    sample_landmarks,
    sample_random_features,
)

FEATURES_BENCH_HEADER = ("method", "m", "seed", "mean_abs_error", "max_abs_error")
DECAY_BENCH_HEADER = ("method", "m", "n_nys", "seed", "kernel_approx_error")
TRAIN_HEADER = ("k", "mean_reward", "std", "upsilon1", "upsilon2", "seconds")
BASELINE_HEADER = ("controller", "mean", "std", "episodes")
DIAGNOSTICS_HEADER = ("quantity", "value")


# ---------------------------------------------------------------------------
# Feature maps for control
# ---------------------------------------------------------------------------


def build_feature_map(env: EnvModel, fs: FeatureSettings, master_seed: int):
    """Feature map over the embedded (scaled, angle-unwrapped) state.

    Random features use ``N(0, bandwidth^2 I)`` frequencies; the Nystrom map
    uses the Gaussian kernel of width ``1 / bandwidth`` with landmarks drawn
    uniformly from the state box and then embedded, or from ``p_alpha``.
    """
    D = embedded_dim(env, fs.embed_angles)
    rng = derive_rng(master_seed, f"features/{fs.variant}", fs.m)
    if fs.variant == PHASE_SHIFTED:
        inner = sample_random_features(KernelParams(fs.sigma, fs.alpha, D), fs.m, PHASE_SHIFTED, fs.bandwidth, rng)
    elif fs.variant == PAIRED_TRIG:
        inner = sample_random_features(KernelParams(fs.sigma, fs.alpha, D), fs.m, PAIRED_TRIG, rng=rng)
    else:
        params = KernelParams(1.0 / fs.bandwidth, fs.alpha, D)
        n_nys = fs.m if fs.n_nys is None else fs.n_nys
        if fs.measure == UNIFORM_BOX:
            states = rng.uniform(env.state_low, env.state_high, size=(n_nys, env.d))
            angle_idx = env.angle_idx if fs.embed_angles else ()
            landmarks = embed_state(states, env.feature_scale, angle_idx)
        else:
            landmarks = sample_landmarks(params, n_nys, fs.measure, rng)
        inner, _ = build_nystrom(params, landmarks, fs.m)
    return env_feature_map(env, inner, fs.embed_angles)


def train_config(cfg: RunConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(
        K=t.K, eta=t.eta, eta_scale=t.eta_scale, lspe=LspeConfig(T=t.T, ridge=t.ridge, gamma=t.gamma), n=t.n,
        eval_every=t.eval_every, eval_episodes=t.eval_episodes, seed=cfg.seed, burn_in=t.burn_in,
        stride=t.stride, n_chains=t.n_chains, grid_points=t.grid_points,
    )


def make_run_env(cfg: RunConfig) -> EnvModel:
    return make_env(cfg.env, **dict(cfg.env_params))


# ---------------------------------------------------------------------------
# Kernel benchmarks
# ---------------------------------------------------------------------------


def _bench_points(params: KernelParams, bs: BenchSettings, n: int, rng) -> np.ndarray:
    return sample_landmarks(params, n, bs.measure, rng, -1.0, 1.0)


def _n_nys(bs: BenchSettings, i: int) -> int:
    return bs.ms[i] if bs.n_nys is None else bs.n_nys[i]


def features_bench_rows(bs: BenchSettings, master_seed: int) -> list[tuple]:
    """Off-diagonal kernel errors ``|k_hat(x, y) - k(x, y)|`` on random pairs from the measure."""
    params = KernelParams(bs.sigma, bs.alpha, bs.d)
    rows = []
    for method in bs.methods:
        for i, m in enumerate(bs.ms):
            for seed in range(bs.seeds):
                rng = derive_rng(master_seed, f"features-bench/{method}/{m}", seed)
                if method == "rff":
                    est = sample_random_features(params, m, PAIRED_TRIG, rng=rng)
                    fn = lambda x, y: rf_kernel_estimate(est, x, y)  # noqa: E731
                else:
                    est, _ = build_nystrom(params, _bench_points(params, bs, _n_nys(bs, i), rng), m)
                    fn = lambda x, y: nystrom_kernel_estimate(est, x, y)  # noqa: E731
                xs = _bench_points(params, bs, bs.n_eval, rng)
                ys = _bench_points(params, bs, bs.n_eval, rng)
                err = np.abs(fn(xs, ys) - k_alpha(params, xs, ys))
                rows.append((method, m, seed, float(err.mean()), float(err.max())))
    return rows


def decay_error(method: str, params: KernelParams, m: int, n_nys: int, n_eval: int, measure: str, rng) -> float:
    """Approximation error used for rate fits.

    Nystrom: mean root diagonal defect on fresh points. Random features are
    exact on the diagonal, so their error is the mean off-diagonal error.
    """
    low, high = -1.0, 1.0
    if method == "nystrom":
        landmarks = sample_landmarks(params, n_nys, measure, rng, low, high)
        fmap, _ = build_nystrom(params, landmarks, m)
        return kernel_approx_error(fmap, params, sample_landmarks(params, n_eval, measure, rng, low, high))
    if method == "rff":
        fmap = sample_random_features(params, m, PAIRED_TRIG, rng=rng)
        xs = sample_landmarks(params, n_eval, measure, rng, low, high)
        ys = sample_landmarks(params, n_eval, measure, rng, low, high)
        return pairwise_kernel_error(fmap, params, xs, ys)
    raise ContractError(f"unknown method {method!r}")


def decay_bench_rows(bs: BenchSettings, master_seed: int) -> list[tuple]:
    params = KernelParams(bs.sigma, bs.alpha, bs.d)
    rows = []
    for method in bs.methods:
        for i, m in enumerate(bs.ms):
            n_nys = _n_nys(bs, i)
            for seed in range(bs.seeds):
                rng = derive_rng(master_seed, f"decay-bench/{method}/{m}", seed)
                err = decay_error(method, params, m, n_nys, bs.n_eval, bs.measure, rng)
                rows.append((method, m, n_nys if method == "nystrom" else 0, seed, err))
    return rows


def loglog_slopes(rows: list[tuple], method: str) -> np.ndarray:
    """Per-seed least-squares slope of ``log error`` against ``log m``."""
    sel = [r for r in rows if r[0] == method]
    seeds = sorted({r[3] for r in sel})
    slopes = []
    for seed in seeds:
        pts = sorted((r[1], r[4]) for r in sel if r[3] == seed)
        x = np.log([p[0] for p in pts])
        y = np.log([max(p[1], 1e-300) for p in pts])
        slopes.append(np.polyfit(x, y, 1)[0])
    return np.array(slopes)


# ---------------------------------------------------------------------------
# Control experiments
# ---------------------------------------------------------------------------


def train_rows(cfg: RunConfig):
    env = make_run_env(cfg)
    fmap = build_feature_map(env, cfg.features, cfg.seed)
    _, curve = sdec_train(env, fmap, train_config(cfg))
    rows = [(r.k, r.mean_reward, r.std, r.upsilon1, r.upsilon2, r.seconds) for r in curve.records]
    meta = {"eta": curve.eta, "feature_dim": int(fmap.dim), "wall_time_per_eval": [r.wall_time for r in curve.records]}
    return rows, meta


def baseline_controller(env: EnvModel, name: str, cfg: RunConfig):
    bs = cfg.baseline
    if name == "zero":
        return ConstantPolicy(np.zeros(env.action_dim) if not np.all(env.lo > 0) else 0.5 * (env.lo + env.hi))
    if name == "energy":
        if not isinstance(env, Pendulum):
            raise ContractError("the energy controller is defined for the pendulum only")
        return EnergySwingup(env, k_e=bs.k_e, theta_switch=bs.theta_switch)
    if name == "ilqr":
        sol = ilqr_solve(env, env.init_center, env.horizon, bs.ilqr_iters, bs.barrier_weight)
        return IlqrPolicy(sol, env)
    raise ContractError(f"unknown controller {name!r}")


def baseline_rows(cfg: RunConfig):
    env = make_run_env(cfg)
    rows = []
    for name in cfg.baseline.controllers:
        ctl = baseline_controller(env, name, cfg)
        mean, std = run_baseline(env, ctl, cfg.baseline.episodes, derive_rng(cfg.seed, "eval"))
        rows.append((name, mean, std, cfg.baseline.episodes))
    return rows, {"ilqr_noise_protocol": "replay nominal with time-varying feedback gains"}


def diagnostics_rows(cfg: RunConfig):
    """Regularity and scale constants for the configured features under the uniform policy."""
    env = make_run_env(cfg)
    fmap = build_feature_map(env, cfg.features, cfg.seed)
    tc = train_config(cfg)
    pol = make_policy(env, fmap, tc.grid_points)
    batch = collect_stationary_batch(env, pol, tc.n, tc.burn_in, tc.stride, derive_rng(cfg.seed, "batch", 0),
                                     n_chains=tc.n_chains)
    u1, u2 = regularity_diagnostics(batch, fmap, env, tc.lspe.gamma)
    rows = [
        ("feature_dim", float(fmap.dim + 1)),
        ("upsilon1", u1),
        ("upsilon2", u2),
        ("c_f", env.c_f),
        ("c_r", env.c_r),
        ("g_tilde", feature_g_tilde(fmap, env)),
    ]
    inner = fmap.inner
    if hasattr(inner, "lam"):
        rows.append(("nystrom_effective_rank", float(effective_rank(inner.lam))))
    try:
        rows.append(("default_eta", default_eta(u2, fmap, env, pol.n_actions, tc.eta_scale)))
    except Exception:
        rows.append(("default_eta", math.nan))
    return rows, {}


def run_command(cfg: RunConfig):
    """Dispatch; returns ``(header, rows, metadata)``."""
    start = time.perf_counter()
    if cfg.command == "features-bench":
        header, (rows, meta) = FEATURES_BENCH_HEADER, (features_bench_rows(cfg.bench, cfg.seed), {})
    elif cfg.command == "decay-bench":
        rows = decay_bench_rows(cfg.bench, cfg.seed)
        meta = {m: float(np.median(loglog_slopes(rows, m))) for m in cfg.bench.methods if len(cfg.bench.ms) > 1}
        header, meta = DECAY_BENCH_HEADER, {"median_loglog_slope": meta}
    elif cfg.command == "train":
        header, (rows, meta) = TRAIN_HEADER, train_rows(cfg)
    elif cfg.command == "eval-baseline":
        header, (rows, meta) = BASELINE_HEADER, baseline_rows(cfg)
    elif cfg.command == "diagnostics":
        header, (rows, meta) = DIAGNOSTICS_HEADER, diagnostics_rows(cfg)
    else:  # unreachable after validation
        raise ContractError(f"unknown command {cfg.command!r}")
    meta["wall_time_seconds"] = time.perf_counter() - start
    return header, rows, meta
