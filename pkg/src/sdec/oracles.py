"""Brute-force reference solvers used to check the main code paths.

Nothing here shares code with the learning modules: tabular problems are
solved by direct linear algebra or plain value iteration, the Gaussian
density is written out in closed form, and LQR gains come from the textbook
backward Riccati recursion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP with transition tensor ``P[s, a, s']``, rewards ``r[s, a]`` and discount."""

    P: np.ndarray
    r: np.ndarray
    gamma: float

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        r = np.asarray(self.r, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or r.shape != P.shape[:2]:
            raise ContractError(f"inconsistent shapes P{P.shape}, r{r.shape}")
        if (P < 0).any() or not np.allclose(P.sum(axis=2), 1.0, rtol=0.0, atol=1e-12):
            raise ContractError("each P[s, a, :] must be a probability vector")
        if not 0.0 <= self.gamma < 1.0:
            raise ContractError(f"gamma must lie in [0, 1), got {self.gamma}")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "r", r)

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]


def random_tabular_mdp(n_states: int, n_actions: int, gamma: float, rng=None) -> TabularMdp:
    """Dense random MDP: Dirichlet(1) transitions, uniform [0, 1) rewards."""
    rng = np.random.default_rng(rng)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    r = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return TabularMdp(P, r, gamma)


def value_iteration(mdp: TabularMdp, tol: float = 1e-10, max_iter: int = 1_000_000):
    """Optimal ``(Q*, V*)``; stops once ``|T Q - Q|_inf <= tol``."""
    if not tol > 0:
        raise ContractError("tol must be positive")
    Q = np.zeros_like(mdp.r)
    for _ in range(max_iter):
        Q_new = mdp.r + mdp.gamma * mdp.P @ Q.max(axis=1)
        residual = np.abs(Q_new - Q).max()
        Q = Q_new
        if residual <= tol:
            break
    return Q, Q.max(axis=1)


def state_action_transition(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    """``P_pi[(s, a), (s', a')] = P[s, a, s'] pi(a' | s')`` as an ``(SA, SA)`` matrix."""
    S, A = mdp.r.shape
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (S, A):
        raise ContractError(f"policy must have shape {(S, A)}, got {policy.shape}")
    return (mdp.P[:, :, :, None] * policy[None, None, :, :]).reshape(S * A, S * A)


def tabular_policy_q(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    """Exact ``Q^pi`` from the linear system ``(I - gamma P_pi) Q = r``."""
    S, A = mdp.r.shape
    M = np.eye(S * A) - mdp.gamma * state_action_transition(mdp, policy)
    try:
        q = np.linalg.solve(M, mdp.r.reshape(-1))
    except np.linalg.LinAlgError as exc:  # cannot happen for gamma < 1
        raise RuntimeError("singular policy-evaluation system") from exc
    return q.reshape(S, A)


def tabular_policy_v(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    return (tabular_policy_q(mdp, policy) * policy).sum(axis=1)


def greedy_policy(Q: np.ndarray) -> np.ndarray:
    pol = np.zeros_like(Q, dtype=float)
    pol[np.arange(Q.shape[0]), Q.argmax(axis=1)] = 1.0
    return pol


def stationary_distribution(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    """Stationary state-action distribution of the chain ``(s, a) -> (s', a')``."""
    Ppi = state_action_transition(mdp, policy)
    n = Ppi.shape[0]
    # Solve nu (P_pi - I) = 0 with sum(nu) = 1 as a least-squares system.
    A = np.vstack([Ppi.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    nu = np.linalg.lstsq(A, b, rcond=None)[0]
    nu = np.clip(nu, 0.0, None)
    return (nu / nu.sum()).reshape(policy.shape)


def gaussian_density(f_val, sigma: float, s_prime):
    """Isotropic Gaussian density ``(2 pi sigma^2)^(-d/2) exp(-|s' - f|^2 / (2 sigma^2))``."""
    if not sigma > 0:
        raise ContractError("sigma must be positive")
    f_val = np.asarray(f_val, dtype=float)
    s_prime = np.asarray(s_prime, dtype=float)
    diff = s_prime - f_val
    d = diff.shape[-1] if diff.ndim else 1
    sq = np.sum(np.atleast_1d(diff) ** 2, axis=-1) if diff.ndim else diff**2
    out = (2.0 * math.pi * sigma**2) ** (-d / 2.0) * np.exp(-sq / (2.0 * sigma**2))
    return out[()] if np.ndim(out) == 0 else out


def _as_schedule(M, H):
    if isinstance(M, (list, tuple)):
        if len(M) < H:
            raise ContractError("time-varying schedule shorter than the horizon")
        return [np.atleast_2d(np.asarray(m, dtype=float)) for m in M]
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return [M] * H


def riccati_finite_horizon(A_t, B_t, Q_t, R_t, H: int, Q_final=None):
    """Gains ``K_t`` (``u_t = -K_t x_t``) for the cost ``sum x'Qx + u'Ru + x_H' Q_final x_H``.

    ``Q_final`` defaults to the last running-cost ``Q``. Matrices may be given
    once (time-invariant) or as length-``H`` lists.

    Returns
    -------
    gains : list of ndarray
        ``K_0 ... K_{H-1}``.
    P : list of ndarray
        Cost-to-go matrices ``P_0 ... P_H``.
    """
    if H < 1:
        raise ContractError("H must be at least 1")
    A, B, Q, R = (_as_schedule(M, H) for M in (A_t, B_t, Q_t, R_t))
    for Rt in R[:H]:
        if not np.all(np.linalg.eigvalsh(0.5 * (Rt + Rt.T)) > 0):
            raise ContractError("R_t must be positive definite")
    P = [None] * (H + 1)
    P[H] = Q[H - 1] if Q_final is None else np.atleast_2d(np.asarray(Q_final, dtype=float))
    gains = [None] * H
    for t in range(H - 1, -1, -1):
        BtP = B[t].T @ P[t + 1]
        K = np.linalg.solve(R[t] + BtP @ B[t], BtP @ A[t])
        gains[t] = K
        P[t] = Q[t] + A[t].T @ P[t + 1] @ (A[t] - B[t] @ K)
        P[t] = 0.5 * (P[t] + P[t].T)
    return gains, P
