"""Least-squares policy evaluation with spectral features.

The critic is linear, ``Q(s, a) = phi(s, a) . w``, where
``phi(s, a) = [psi(f(s, a)), r(s, a)]``: the feature map is evaluated at the
deterministic next-state mean and the reward is appended as the last
coordinate.

Starting from ``w_0 = 0`` the iteration

    (Phi' Phi + ridge I) w_{t+1} = Phi' (r + gamma Phi_next w_t)

is run for ``T`` steps. Both the Cholesky factor of the normal matrix and
``Phi' Phi_next`` are computed once, so each step costs two triangular
solves.

Finite MDPs use one-hot features (:class:`TabularOneHot`). Their reward
column would be a linear combination of the indicator columns, so it is
omitted there.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ContractError, NumericalAbort, RankDeficiencyError
from .oracles import TabularMdp, state_action_transition, stationary_distribution


@dataclass(frozen=True)
class TabularOneHot:
    """Indicator features over ``(s, a)`` cells of a finite MDP."""

    n_states: int
    n_actions: int

    @property
    def dim(self) -> int:
        return self.n_states * self.n_actions


def embed_state(x, scale, angle_idx=()) -> np.ndarray:
    """Divide non-angle coordinates by ``scale`` and append ``(cos, sin)`` of each angle."""
    x = np.asarray(x, dtype=float)
    keep = [i for i in range(len(scale)) if i not in angle_idx]
    parts = [x[..., keep] / np.asarray(scale)[keep]]
    if angle_idx:
        ang = x[..., list(angle_idx)]
        parts += [np.cos(ang), np.sin(ang)]
    return np.concatenate(parts, axis=-1)


@dataclass(frozen=True, eq=False)
class ScaledFeatureMap:
    """Feature map applied to an embedded state.

    Non-angle coordinates are divided by ``scale``; each coordinate listed in
    ``angle_idx`` is replaced by the pair ``(cos, sin)`` appended at the end,
    which removes the seam at ``+-pi``. The inner map must accept inputs of
    dimension ``len(scale) + len(angle_idx)``.
    """

    inner: object
    scale: np.ndarray
    angle_idx: tuple = ()

    def __post_init__(self):
        scale = np.array(self.scale, dtype=float)
        if scale.ndim != 1 or not np.all(scale > 0):
            raise ContractError("scale must be a vector of positive numbers")
        scale.flags.writeable = False
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "angle_idx", tuple(int(i) for i in self.angle_idx))
        if any(not 0 <= i < scale.size for i in self.angle_idx):
            raise ContractError("angle_idx out of range")

    @property
    def dim(self) -> int:
        return self.inner.dim

    @property
    def m(self) -> int:
        return self.inner.m

    @property
    def params(self):
        return self.inner.params

    @property
    def input_dim(self) -> int:
        return self.scale.size + len(self.angle_idx)

    def embed(self, f_val) -> np.ndarray:
        return embed_state(f_val, self.scale, self.angle_idx)

    def transform(self, f_val) -> np.ndarray:
        return self.inner.transform(self.embed(f_val))


def env_feature_map(env, inner, embed_angles: bool = True) -> ScaledFeatureMap:
    """Wrap ``inner`` with the environment's coordinate scales (and angle embedding)."""
    return ScaledFeatureMap(inner, env.feature_scale, env.angle_idx if embed_angles else ())


def embedded_dim(env, embed_angles: bool = True) -> int:
    return env.d + (len(env.angle_idx) if embed_angles else 0)


def feature_dim(featmap) -> int:
    """Length of ``phi``: map dimension plus the reward column (none for one-hot)."""
    return featmap.dim if isinstance(featmap, TabularOneHot) else featmap.dim + 1


def featurize(featmap, env, s, a) -> np.ndarray:
    """``phi(s, a)``, vectorised over leading axes."""
    if isinstance(featmap, TabularOneHot):
        s = np.asarray(s)
        a = np.asarray(a)
        idx = s * featmap.n_actions + a
        return np.eye(featmap.dim)[idx]
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    psi = np.asarray(featmap.transform(env.f_eval(s, a)))
    r = np.asarray(env.reward(s, a), dtype=float)
    return np.concatenate([psi, r[..., None]], axis=-1)


@dataclass(frozen=True)
class LspeConfig:
    """Inner-loop settings. ``T`` and ``ridge`` default to ``ceil(5 log10 n)`` and ``1e-6 n``."""

    T: int | None = None
    ridge: float | None = None
    gamma: float = 0.99

    def __post_init__(self):
        if self.T is not None and (int(self.T) != self.T or self.T < 0):
            raise ContractError("T must be a non-negative integer")
        if self.ridge is not None and not self.ridge >= 0:
            raise ContractError("ridge must be non-negative")
        if not 0.0 <= self.gamma < 1.0:
            raise ContractError("gamma must lie in [0, 1)")

    def resolve(self, n: int) -> tuple[int, float]:
        T = int(self.T) if self.T is not None else max(1, math.ceil(5.0 * math.log10(max(n, 2))))
        ridge = float(self.ridge) if self.ridge is not None else 1e-6 * n
        return T, ridge


@dataclass(frozen=True, eq=False)
class QWeights:
    w: np.ndarray
    featmap: object
    gamma: float
    T: int = 0
    ridge: float = 0.0


def _factor(G: np.ndarray, ridge: float):
    if ridge == 0.0:
        ev = np.linalg.eigvalsh(G)
        if ev[0] <= 1e-12 * max(ev[-1], 1e-300):
            raise RankDeficiencyError(
                "normal matrix is singular with ridge = 0; use ridge > 0",
                effective_rank=int(np.sum(ev > 1e-12 * max(ev[-1], 1e-300))),
            )
    try:
        return linalg.cho_factor(G, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise RankDeficiencyError(f"normal matrix is not positive definite: {exc}; increase ridge") from exc


def lspe_iterate(G: np.ndarray, b: np.ndarray, M: np.ndarray, gamma: float, T: int, ridge: float,
                 history: bool = False):
    """Run ``w_{t+1} = (G + ridge I)^{-1} (b + gamma M w_t)`` from ``w_0 = 0``.

    ``G``, ``b`` and ``M`` are the (possibly weighted) sums ``Phi' Phi``,
    ``Phi' r`` and ``Phi' Phi_next``. With ``history=True`` all iterates are
    returned as a ``(T + 1, dim)`` array instead of the last one.
    """
    dim = G.shape[0]
    w = np.zeros(dim)
    its = [w] if history else None
    if T == 0:
        return np.array(its) if history else w
    cho = _factor(G + ridge * np.eye(dim), ridge)
    for t in range(T):
        with np.errstate(over="ignore", invalid="ignore"):
            rhs = b + gamma * (M @ w)
        if not np.all(np.isfinite(rhs)):
            raise NumericalAbort("LSPE iterates diverged; increase ridge",
                                 diagnostics={"iteration": t, "ridge": ridge, "gamma": gamma})
        w = linalg.cho_solve(cho, rhs)
        if history:
            its.append(w)
    return np.array(its) if history else w


def feature_matrices(batch, featmap, env):
    """``(Phi, Phi_next)`` for a sample batch."""
    return featurize(featmap, env, batch.s, batch.a), featurize(featmap, env, batch.s_next, batch.a_next)


def lspe(batch, featmap, env, cfg: LspeConfig, features=None) -> QWeights:
    """Sample-based policy evaluation; ``features`` may pass precomputed ``(Phi, Phi_next)``."""
    n = len(batch)
    Phi, Phi_next = features if features is not None else feature_matrices(batch, featmap, env)
    if n < Phi.shape[1]:
        warnings.warn(f"batch size {n} is below the feature dimension {Phi.shape[1]}", stacklevel=2)
    T, ridge = cfg.resolve(n)
    r = np.asarray(batch.r, dtype=float)
    w = lspe_iterate(Phi.T @ Phi, Phi.T @ r, Phi.T @ Phi_next, cfg.gamma, T, ridge)
    return QWeights(w, featmap, cfg.gamma, T, ridge)


def exact_moments(mdp: TabularMdp, policy: np.ndarray, weights=None):
    S, A = mdp.r.shape
    nu = stationary_distribution(mdp, policy) if weights is None else np.asarray(weights, dtype=float)
    if nu.shape != (S, A):
        raise ContractError(f"weights must have shape {(S, A)}")
    D = np.diag(nu.reshape(-1))
    Ppi = state_action_transition(mdp, policy)
    return D, D @ mdp.r.reshape(-1), D @ Ppi


def lspe_exact_tabular(mdp: TabularMdp, policy, cfg: LspeConfig, weights=None, history: bool = False):
    """Population-limit LSPE with one-hot features.

    Sample sums are replaced by expectations under ``weights`` (default: the
    stationary state-action distribution of ``policy``). ``cfg.ridge = None``
    means no ridge here and ``cfg.T = None`` means 300 steps. With
    ``history=True`` returns all iterates.
    """
    policy = np.asarray(policy, dtype=float)
    D, b, M = exact_moments(mdp, policy, weights)
    T = 300 if cfg.T is None else int(cfg.T)
    ridge = 0.0 if cfg.ridge is None else float(cfg.ridge)
    out = lspe_iterate(D, b, M, cfg.gamma, T, ridge, history=history)
    if history:
        return out
    return QWeights(out, TabularOneHot(*mdp.r.shape), cfg.gamma, T, ridge)


def projected_bellman_residual(mdp: TabularMdp, policy, w, gamma: float, weights=None) -> float:
    """``|Phi w - Pi(r + gamma P_pi Phi w)|`` in the weighted norm (one-hot features)."""
    D, b, M = exact_moments(mdp, np.asarray(policy, dtype=float), weights)
    proj = np.linalg.solve(D, b + gamma * M @ w)
    return float(np.sqrt(np.diag(D) @ (w - proj) ** 2))


def q_value(qw: QWeights, featmap, env, s, a):
    out = featurize(featmap, env, s, a) @ qw.w
    return out[()] if np.ndim(out) == 0 else out


def upsilon_from_features(Phi: np.ndarray, Phi_next: np.ndarray, gamma: float) -> tuple[float, float]:
    n = Phi.shape[0]
    C = Phi.T @ Phi / n
    B = Phi.T @ (Phi - gamma * Phi_next) / n
    u1 = np.linalg.eigvalsh(0.5 * (C + C.T))[0]
    u2 = np.linalg.eigvalsh(0.5 * (B + B.T))[0]
    return float(u1), float(u2)


def regularity_diagnostics(batch, featmap, env, gamma: float, features=None) -> tuple[float, float]:
    """Smallest eigenvalues of ``E[phi phi']`` and of the symmetric part of ``E[phi (phi - gamma phi_next)']``.

    Negative values are returned as is; they signal that the regularity
    assumption fails for this batch.
    """
    Phi, Phi_next = features if features is not None else feature_matrices(batch, featmap, env)
    return upsilon_from_features(Phi, Phi_next, gamma)


@dataclass
class TabularBatch:
    """Transitions of a finite MDP, indices rather than vectors."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    a_next: np.ndarray

    def __len__(self) -> int:
        return self.s.shape[0]


def sample_tabular_batch(mdp: TabularMdp, policy, n: int, rng=None, weights=None) -> TabularBatch:
    """i.i.d. ``(s, a) ~ weights`` (default stationary), ``s' ~ P``, ``a' ~ policy(s')``."""
    if n < 1:
        raise ContractError("n must be at least 1")
    rng = np.random.default_rng(rng)
    policy = np.asarray(policy, dtype=float)
    S, A = mdp.r.shape
    nu = stationary_distribution(mdp, policy) if weights is None else np.asarray(weights, dtype=float)
    cells = rng.choice(S * A, size=n, p=nu.reshape(-1) / nu.sum())
    s, a = np.divmod(cells, A)
    cdf = np.cumsum(mdp.P[s, a], axis=1)
    s_next = np.minimum((cdf < rng.random(n)[:, None]).sum(axis=1), S - 1)
    pcdf = np.cumsum(policy[s_next], axis=1)
    a_next = np.minimum((pcdf < rng.random(n)[:, None]).sum(axis=1), A - 1)
    return TabularBatch(s, a, mdp.r[s, a], s_next, a_next)
