"""Softmax policies over a finite action set and the natural-policy-gradient loop.

Each outer iteration draws fresh on-policy samples, fits a linear critic with
LSPE and moves the policy parameters by ``theta <- theta + eta w``. With
``pi(a | s)`` proportional to ``exp(phi(s, a) . theta)`` this is the natural
gradient step for the softmax class.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .envs import EnvModel, action_grid, collect_stationary_batch, rollout_batch
from .errors import ContractError, NumericalAbort
from .oracles import TabularMdp, tabular_policy_v
from .policy_eval import (
    LspeConfig,
    QWeights,
    exact_moments,
    TabularOneHot,
    feature_dim,
    feature_matrices,
    featurize,
    lspe,
    lspe_exact_tabular,
    q_value,
    sample_tabular_batch,
    upsilon_from_features,
)
from .seeding import derive_rng
from .spectral_features import NystromFeatureMap, PHASE_SHIFTED, RandomFeatureMap, g_tilde


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass(eq=False)
class SoftmaxPolicy:
    """``pi(a | s)`` proportional to ``exp(phi(s, a) . theta)`` over a finite action grid.

    For a :class:`~sdec.oracles.TabularMdp` the grid is the action index set
    and states are integers.
    """

    theta: np.ndarray
    action_grid: np.ndarray
    featmap: object
    env: object

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (feature_dim(self.featmap),):
            raise ContractError(f"theta must have length {feature_dim(self.featmap)}, got {self.theta.shape}")

    @property
    def tabular(self) -> bool:
        return isinstance(self.env, TabularMdp)

    @property
    def n_actions(self) -> int:
        return len(self.action_grid)

    def features_all(self, states) -> np.ndarray:
        """``phi(s, a)`` for every grid action: shape ``(B, |A|, dim)``."""
        if self.tabular:
            s = np.atleast_1d(np.asarray(states))
            return featurize(self.featmap, self.env, s[:, None], np.asarray(self.action_grid)[None, :])
        s = np.atleast_2d(np.asarray(states, dtype=float))
        B, A = s.shape[0], self.n_actions
        ss = np.broadcast_to(s[:, None, :], (B, A, s.shape[1]))
        aa = np.broadcast_to(self.action_grid[None, :, :], (B, A, self.action_grid.shape[1]))
        return featurize(self.featmap, self.env, ss, aa)

    def probs(self, states) -> np.ndarray:
        return softmax(self.features_all(states) @ self.theta)

    def act_index(self, states, rng) -> np.ndarray:
        p = self.probs(states)
        u = rng.random(p.shape[0])
        idx = (np.cumsum(p, axis=1) < u[:, None]).sum(axis=1)
        return np.minimum(idx, self.n_actions - 1)

    def act(self, states, t, rng) -> np.ndarray:
        idx = self.act_index(states, rng)
        return np.asarray(self.action_grid)[idx]

    def table(self) -> np.ndarray:
        """Full ``(|S|, |A|)`` probability table (finite MDPs only)."""
        if not self.tabular:
            raise ContractError("table() needs a finite MDP")
        return self.probs(np.arange(self.env.n_states))


def policy_probs(pol: SoftmaxPolicy, s) -> np.ndarray:
    """Action probabilities at one state (vector) or a batch of states (matrix)."""
    single = (np.ndim(s) == 0) if pol.tabular else (np.ndim(s) == 1)
    p = pol.probs(s)
    return p[0] if single else p


def npg_update(theta, w, eta: float) -> np.ndarray:
    """``theta + eta w``."""
    theta = np.asarray(theta, dtype=float)
    w = np.asarray(w.w if isinstance(w, QWeights) else w, dtype=float)
    if theta.shape != w.shape:
        raise ContractError(f"dimension mismatch: theta {theta.shape}, w {w.shape}")
    return theta + eta * w


def advantage(qw: QWeights, pol: SoftmaxPolicy, s, a):
    """``Q(s, a) - sum_b pi(b | s) Q(s, b)`` at a single state."""
    feats = pol.features_all(np.asarray(s)[None] if not pol.tabular else [s])[0]
    q_all = feats @ qw.w
    q_sa = q_value(qw, pol.featmap, pol.env, s, a)
    return float(q_sa - pol.probs(np.asarray(s)[None] if not pol.tabular else [s])[0] @ q_all)


def make_policy(env, featmap, grid_points: int = 15, theta=None) -> SoftmaxPolicy:
    if isinstance(env, TabularMdp):
        grid = np.arange(env.n_actions)
    else:
        grid = action_grid(env, grid_points)
    theta = np.zeros(feature_dim(featmap)) if theta is None else theta
    return SoftmaxPolicy(theta, grid, featmap, env)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def evaluate_policy(env, pol, episodes: int, rng, horizon: int | None = None) -> tuple[float, float]:
    """Mean and (population) standard deviation of undiscounted episodic returns.

    For a finite MDP the exact discounted value averaged over a uniform start
    state is returned, with standard deviation 0.
    """
    if episodes < 1:
        raise ContractError("episodes must be at least 1")
    if isinstance(env, TabularMdp):
        v = tabular_policy_v(env, pol.table())
        return float(v.mean()), 0.0
    H = env.horizon if horizon is None else horizon
    _, _, rewards = rollout_batch(env, pol, H, rng, episodes)
    returns = rewards.sum(axis=1)
    return float(returns.mean()), float(returns.std()) if episodes > 1 else 0.0


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Outer-loop settings.

    ``eta = None`` selects ``eta_scale * upsilon2 / (g_tilde^2 m) * sqrt(log |A|)``
    with ``upsilon2`` estimated on the first batch.
    """

    K: int = 100
    eta: float | None = None
    eta_scale: float = 0.05
    lspe: LspeConfig = field(default_factory=LspeConfig)
    n: int = 2000
    eval_every: int = 25
    eval_episodes: int = 100
    seed: int = 0
    burn_in: int = 200
    stride: int = 10
    n_chains: int = 10
    grid_points: int = 15
    exact: bool = False

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ContractError("K must be a positive integer")
        if self.eta is not None and not self.eta > 0:
            raise ContractError("eta must be positive")
        if not self.eta_scale > 0:
            raise ContractError("eta_scale must be positive")
        if self.n < 1 or self.eval_every < 1 or self.eval_episodes < 1:
            raise ContractError("n, eval_every and eval_episodes must be positive")


@dataclass(frozen=True)
class CurveRecord:
    k: int
    mean_reward: float
    std: float
    upsilon1: float
    upsilon2: float
    seconds: float
    wall_time: float


@dataclass
class LearningCurve:
    records: list = field(default_factory=list)
    eta: float | None = None

    def append(self, rec: CurveRecord):
        if self.records and rec.k <= self.records[-1].k:
            raise ContractError("curve iterations must be strictly increasing")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def feature_m(featmap) -> int:
    if isinstance(featmap, TabularOneHot):
        return featmap.dim
    return int(featmap.m)


def feature_g_tilde(featmap, env) -> float:
    """Feature-magnitude bound entering the default step size."""
    inner = getattr(featmap, "inner", featmap)
    if isinstance(inner, TabularOneHot) or (isinstance(inner, RandomFeatureMap) and inner.variant == PHASE_SHIFTED):
        return 1.0
    if isinstance(inner, (RandomFeatureMap, NystromFeatureMap)):
        c_f = env.c_f
        scale = getattr(featmap, "scale", None)
        if scale is not None:
            c_f = float(np.linalg.norm(np.maximum(np.abs(env.state_low), np.abs(env.state_high)) / scale))
        return g_tilde(inner.params, c_f)
    return 1.0


def default_eta(upsilon2: float, featmap, env, n_actions: int, scale: float) -> float:
    """Step size with the ``upsilon2 / (g_tilde^2 m) * sqrt(log |A|)`` scaling."""
    gt = feature_g_tilde(featmap, env)
    log_a = math.log(n_actions) if n_actions > 1 else 1.0
    eta = scale * max(upsilon2, 0.0) / (gt**2 * feature_m(featmap)) * math.sqrt(log_a)
    if not eta > 0:
        raise NumericalAbort(
            "default step size is not positive (upsilon2 estimate <= 0); pass eta explicitly",
            diagnostics={"upsilon2": upsilon2, "g_tilde": gt},
        )
    return eta


def _collect(env, pol, cfg: TrainConfig, k: int):
    rng = derive_rng(cfg.seed, "batch", k)
    if isinstance(env, TabularMdp):
        return sample_tabular_batch(env, pol.table(), cfg.n, rng)
    return collect_stationary_batch(env, pol, cfg.n, cfg.burn_in, cfg.stride, rng, n_chains=cfg.n_chains)


def _fit(env, featmap, pol, batch, cfg: TrainConfig):
    """Critic weights and the two regularity estimates for the current policy."""
    if cfg.exact:
        if not isinstance(env, TabularMdp):
            raise ContractError("exact evaluation is only available for finite MDPs")
        # Uniform cell weights keep full support as the policy sharpens; with
        # one-hot features the fixed point is Q^pi for any such weighting.
        table = pol.table()
        weights = np.full(table.shape, 1.0 / table.size)
        D, b, M = exact_moments(env, table, weights)
        B = D - cfg.lspe.gamma * M
        u1 = float(np.linalg.eigvalsh(D)[0])
        u2 = float(np.linalg.eigvalsh(0.5 * (B + B.T))[0])
        return lspe_exact_tabular(env, table, cfg.lspe, weights), u1, u2
    feats = feature_matrices(batch, featmap, env)
    u1, u2 = upsilon_from_features(*feats, cfg.lspe.gamma)
    return lspe(batch, featmap, env, cfg.lspe, features=feats), u1, u2


def sdec_train(env, featmap, cfg: TrainConfig, rng=None, callback: Callable | None = None):
    """Run ``cfg.K`` natural-policy-gradient iterations from ``theta = 0``.

    Evaluations happen at ``k = 0``, every ``cfg.eval_every`` iterations and
    after the last update. ``rng`` (an integer) overrides ``cfg.seed``; all
    randomness is derived from that master seed by label, so equal seeds give
    identical curves. ``callback(k, policy)`` is called before each update.

    Returns
    -------
    policy : SoftmaxPolicy
    curve : LearningCurve
    """
    if rng is not None:
        cfg = replace(cfg, seed=int(rng))
    pol = make_policy(env, featmap, cfg.grid_points)
    curve = LearningCurve()
    eta = cfg.eta
    sim_seconds = 0.0
    step_seconds = 0.0 if isinstance(env, TabularMdp) else env.dt * (1 + cfg.burn_in + cfg.stride * cfg.n / cfg.n_chains)
    start = time.perf_counter()
    last_u = (math.nan, math.nan)

    def record(k):
        mean, std = evaluate_policy(env, pol, cfg.eval_episodes, derive_rng(cfg.seed, "eval"))
        curve.append(CurveRecord(k, mean, std, last_u[0], last_u[1], sim_seconds, time.perf_counter() - start))

    for k in range(cfg.K):
        batch = None if cfg.exact else _collect(env, pol, cfg, k)
        qw, u1, u2 = _fit(env, featmap, pol, batch, cfg)
        last_u = (u1, u2)
        if k == 0:
            record(0)
        elif k % cfg.eval_every == 0:
            record(k)
        if eta is None:
            eta = default_eta(u2, featmap, env, pol.n_actions, cfg.eta_scale)
            curve.eta = eta
        if callback is not None:
            callback(k, pol)
        theta = npg_update(pol.theta, qw, eta)
        if not np.all(np.isfinite(theta)):
            raise NumericalAbort("non-finite policy parameters", diagnostics={
                "k": k, "eta": eta, "upsilon1": u1, "upsilon2": u2, "max_abs_w": float(np.max(np.abs(qw.w)))})
        pol = replace(pol, theta=theta)
        sim_seconds += step_seconds
    curve.eta = eta
    record(cfg.K)
    return pol, curve
