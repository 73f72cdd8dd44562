"""Comparison controllers: iLQR with a log barrier on the inputs, and energy-based swing-up.

iLQR works on the deterministic part of the dynamics. Jacobians come from
central finite differences; cost derivatives are analytic because every
environment cost is quadratic. Input bounds are enforced by the barrier

    w * sum_j [-log((u_j - lo_j) / (hi_j - lo_j)) - log((hi_j - u_j) / (hi_j - lo_j))]

whose weight ``w`` halves after each accepted iteration. The normalisation
makes the barrier positive (at least ``2 log 2`` per input), so shrinking
``w`` can only lower the cost of a fixed trajectory and the recorded cost
sequence stays monotone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .envs import EnvModel, FunctionPolicy, Pendulum, rollout_batch
from .errors import ContractError, NumericalAbort

FD_STEP = 1e-5


# ---------------------------------------------------------------------------
# Problems
# ---------------------------------------------------------------------------


class EnvProblem:
    """Optimal-control view of an environment: minimise ``-reward`` plus the barrier."""

    def __init__(self, env: EnvModel):
        self.env = env
        self.d = env.d
        self.action_dim = env.action_dim
        self.lo = env.lo
        self.hi = env.hi
        self.q = np.asarray(env.state_weights, dtype=float)
        self.r = np.asarray(env.action_weights, dtype=float)
        self.q_final = self.q

    def dynamics(self, x, u):
        return self.env.f_eval(x, u)

    def diff(self, x, y):
        return self.env.state_diff(x, y)

    def running(self, x, u):
        """Cost and derivatives ``(l, lx, lu, lxx, luu)`` per timestep (no barrier)."""
        dev = self.env.state_diff(x, self.env.target)
        du = u - self.env.action_ref
        cost = dev**2 @ self.q + du**2 @ self.r
        return cost, 2.0 * dev * self.q, 2.0 * du * self.r, np.diag(2.0 * self.q), np.diag(2.0 * self.r)

    def terminal(self, x):
        dev = self.env.state_diff(x, self.env.target)
        return float(dev**2 @ self.q_final), 2.0 * dev * self.q_final, np.diag(2.0 * self.q_final)


class LinearQuadraticProblem:
    """``x' = A x + B u`` with cost ``sum x'Qx + u'Ru + x_H' Q_final x_H`` and no input bounds."""

    def __init__(self, A, B, Q, R, Q_final=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.Q = np.atleast_2d(np.asarray(Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(R, dtype=float))
        self.Qf = self.Q if Q_final is None else np.atleast_2d(np.asarray(Q_final, dtype=float))
        self.d = self.A.shape[0]
        self.action_dim = self.B.shape[1]
        self.lo = np.full(self.action_dim, -np.inf)
        self.hi = np.full(self.action_dim, np.inf)

    def dynamics(self, x, u):
        return x @ self.A.T + u @ self.B.T

    def diff(self, x, y):
        return np.asarray(x, dtype=float) - np.asarray(y, dtype=float)

    def running(self, x, u):
        cost = np.einsum("...i,ij,...j->...", x, self.Q, x) + np.einsum("...i,ij,...j->...", u, self.R, u)
        lx = x @ (self.Q + self.Q.T)
        lu = u @ (self.R + self.R.T)
        return cost, lx, lu, self.Q + self.Q.T, self.R + self.R.T

    def terminal(self, x):
        return float(x @ self.Qf @ x), x @ (self.Qf + self.Qf.T), self.Qf + self.Qf.T


def _barrier(problem, u, weight):
    """Normalised log barrier and its first two derivatives (elementwise)."""
    lo, hi = problem.lo, problem.hi
    bounded = np.isfinite(lo) & np.isfinite(hi)
    if weight == 0.0 or not bounded.any():
        z = np.zeros_like(u)
        return np.zeros(u.shape[:-1]), z, z
    if np.any((u[..., bounded] <= lo[bounded]) | (u[..., bounded] >= hi[bounded])):
        return np.full(u.shape[:-1], np.inf), None, None
    width = np.where(bounded, hi - lo, 1.0)
    a = np.where(bounded, u - lo, 1.0)
    b = np.where(bounded, hi - u, 1.0)
    val = np.where(bounded, -np.log(a / width) - np.log(b / width), 0.0).sum(axis=-1)
    grad = np.where(bounded, -1.0 / a + 1.0 / b, 0.0)
    hess = np.where(bounded, 1.0 / a**2 + 1.0 / b**2, 0.0)
    return weight * val, weight * grad, weight * hess


def _rollout(problem, x0, U):
    X = np.empty((U.shape[0] + 1, problem.d))
    X[0] = x0
    for t in range(U.shape[0]):
        X[t + 1] = problem.dynamics(X[t], U[t])
    return X


def _total_cost(problem, X, U, weight) -> float:
    run, *_ = problem.running(X[:-1], U)
    bar, _, _ = _barrier(problem, U, weight)
    total = float(np.sum(run) + np.sum(bar) + problem.terminal(X[-1])[0])
    return total if math.isfinite(total) else math.inf


def fd_jacobians(problem, X, U, step: float = FD_STEP):
    """Central-difference ``df/dx`` and ``df/du`` at every ``(x_t, u_t)``: shapes ``(H, d, d)``, ``(H, d, k)``."""
    H, d = X.shape[0], X.shape[1]
    k = U.shape[1]
    ex, eu = np.eye(d) * step, np.eye(k) * step
    xp = X[:, None, :] + ex[None]
    xm = X[:, None, :] - ex[None]
    uu = np.broadcast_to(U[:, None, :], (H, d, k))
    fx = problem.diff(problem.dynamics(xp, uu), problem.dynamics(xm, uu)) / (2.0 * step)
    up = U[:, None, :] + eu[None]
    um = U[:, None, :] - eu[None]
    xx = np.broadcast_to(X[:, None, :], (H, k, d))
    fu = problem.diff(problem.dynamics(xx, up), problem.dynamics(xx, um)) / (2.0 * step)
    return np.swapaxes(fx, 1, 2), np.swapaxes(fu, 1, 2)


def _backward(problem, X, U, fx, fu, weight, mu):
    H = U.shape[0]
    _, lx, lu, lxx, luu = problem.running(X[:-1], U)
    _, bg, bh = _barrier(problem, U, weight)
    _, Vx, Vxx = problem.terminal(X[-1])
    k_ff = np.empty_like(U)
    K_fb = np.empty((H, problem.action_dim, problem.d))
    expected = 0.0
    for t in range(H - 1, -1, -1):
        A, B = fx[t], fu[t]
        Qx = lx[t] + A.T @ Vx
        Qu = lu[t] + bg[t] + B.T @ Vx
        Qxx = lxx + A.T @ Vxx @ A
        Quu = luu + np.diag(bh[t]) + B.T @ Vxx @ B + mu * np.eye(problem.action_dim)
        Qux = B.T @ Vxx @ A
        try:
            cho = linalg.cho_factor(0.5 * (Quu + Quu.T))
        except linalg.LinAlgError:
            return None
        k = -linalg.cho_solve(cho, Qu)
        K = -linalg.cho_solve(cho, Qux)
        k_ff[t], K_fb[t] = k, K
        expected += float(k @ Qu)
        Vx = Qx + K.T @ Quu @ k + K.T @ Qu + Qux.T @ k
        Vxx = Qxx + K.T @ Quu @ K + K.T @ Qux + Qux.T @ K
        Vxx = 0.5 * (Vxx + Vxx.T)
    return k_ff, K_fb, expected


def _forward(problem, X, U, k_ff, K_fb, step):
    Xn = np.empty_like(X)
    Un = np.empty_like(U)
    Xn[0] = X[0]
    for t in range(U.shape[0]):
        Un[t] = U[t] + step * k_ff[t] + K_fb[t] @ problem.diff(Xn[t], X[t])
        Xn[t + 1] = problem.dynamics(Xn[t], Un[t])
    return Xn, Un


@dataclass
class IlqrSolution:
    nominal_states: np.ndarray
    nominal_controls: np.ndarray
    feedback_gains: np.ndarray
    cost_per_iteration: list = field(default_factory=list)
    converged: bool = False
    barrier_weight: float = 0.0
    accepted: int = 0
    message: str = ""


def ilqr_solve(env, x0, H: int | None = None, max_iters: int = 50, barrier_weight: float = 1e-2,
               barrier_decay: float = 0.5, barrier_floor: float = 1e-5, U_init=None, tol: float = 1e-9,
               mu_init: float = 0.0, mu_max: float = 1e10) -> IlqrSolution:
    """Iterative LQR from ``x0`` over ``H`` steps.

    ``env`` is an :class:`~sdec.envs.EnvModel` or a problem object such as
    :class:`LinearQuadraticProblem`. ``cost_per_iteration[0]`` is the cost of
    the initial guess (controls at the bound midpoint, or zero when unbounded);
    each further entry is the cost after an accepted, strictly improving step.
    ``feedback_gains[t]`` is ``K_t`` in ``u = u_t + K_t (x - x_t)``.
    """
    problem = EnvProblem(env) if isinstance(env, EnvModel) else env
    if H is None:
        H = env.horizon if isinstance(env, EnvModel) else None
    if H is None or H < 1:
        raise ContractError("H must be a positive integer")
    if max_iters < 0 or barrier_weight < 0:
        raise ContractError("max_iters and barrier_weight must be non-negative")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (problem.d,) or not np.all(np.isfinite(x0)):
        raise ContractError(f"x0 must be a finite vector of length {problem.d}")
    if U_init is None:
        bounded = np.isfinite(problem.lo) & np.isfinite(problem.hi)
        mid = np.where(bounded, 0.5 * (np.where(bounded, problem.lo, 0.0) + np.where(bounded, problem.hi, 0.0)), 0.0)
        U = np.tile(mid, (H, 1))
    else:
        U = np.array(U_init, dtype=float).reshape(H, problem.action_dim)
    weight = float(barrier_weight)
    X = _rollout(problem, x0, U)
    J = _total_cost(problem, X, U, weight)
    if not math.isfinite(J):
        raise NumericalAbort("initial trajectory has non-finite cost", diagnostics={"x0": x0.tolist()})
    costs = [J]
    mu = mu_init
    converged = False
    accepted = 0
    message = "iteration limit"
    steps = 0.5 ** np.arange(12)
    for _ in range(max_iters):
        fx, fu = fd_jacobians(problem, X[:-1], U)
        result = None
        while result is None:
            result = _backward(problem, X, U, fx, fu, weight, mu)
            if result is None:
                mu = max(1e-6, 10.0 * mu)
                if mu > mu_max:
                    break
        if result is None:
            message = "regularisation limit"
            break
        k_ff, K_fb, expected = result
        best = None
        for alpha in steps:
            try:
                Xn, Un = _forward(problem, X, U, k_ff, K_fb, alpha)
            except Exception:  # non-finite state inside the dynamics
                continue
            Jn = _total_cost(problem, Xn, Un, weight)
            if Jn < J:
                best = (Xn, Un, Jn)
                break
        if best is None or J - best[2] <= tol * max(1.0, abs(J)):
            if best is None and mu < mu_max and abs(expected) > tol * max(1.0, abs(J)):
                mu = max(1e-6, 10.0 * mu)
                continue
            converged = True
            message = "no further improvement"
            break
        X, U, J = best
        costs.append(J)
        accepted += 1
        mu = 0.0 if mu <= 1e-6 else 0.5 * mu
        if weight > 0:
            weight = max(barrier_floor, weight * barrier_decay)
            J = _total_cost(problem, X, U, weight)
    fx, fu = fd_jacobians(problem, X[:-1], U)
    result = None
    mu_final = mu
    while result is None and mu_final <= mu_max:
        result = _backward(problem, X, U, fx, fu, weight, mu_final)
        mu_final = max(1e-6, 10.0 * mu_final)
    gains = result[1] if result is not None else np.zeros((H, problem.action_dim, problem.d))
    return IlqrSolution(X, U, gains, costs, converged, weight, accepted, message)


class IlqrPolicy:
    """Replays the nominal controls with time-varying feedback, clipped to the bounds."""

    def __init__(self, solution: IlqrSolution, env: EnvModel):
        self.solution = solution
        self.env = env

    def act(self, states, t, rng):
        sol = self.solution
        t = min(int(t), sol.nominal_controls.shape[0] - 1)
        dx = self.env.state_diff(np.atleast_2d(states), sol.nominal_states[t])
        u = sol.nominal_controls[t] + dx @ sol.feedback_gains[t].T
        return np.clip(u, self.env.lo, self.env.hi)


# ---------------------------------------------------------------------------
# Energy-based swing-up
# ---------------------------------------------------------------------------


def upright_lqr_gain(env: Pendulum) -> np.ndarray:
    """Infinite-horizon discrete LQR gain about upright rest, from the cost weights."""
    problem = EnvProblem(env)
    fx, fu = fd_jacobians(problem, np.zeros((1, env.d)), np.zeros((1, env.action_dim)))
    A, B = fx[0], fu[0]
    Q, R = np.diag(env.state_weights), np.diag(env.action_weights)
    P = linalg.solve_discrete_are(A, B, Q, R)
    return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


@dataclass(frozen=True, eq=False)
class EnergySwingup:
    """Pump energy towards the upright level, then hand over to LQR.

    Outside ``|theta| < theta_switch``: ``u = clip(k_e (E_top - E) sign(theta_dot), +-u_max)``
    with a ``+u_max`` kick when ``theta_dot = 0``. Inside: ``u = clip(-K s)``.
    """

    env: Pendulum
    k_e: float = 5.0
    theta_switch: float = 0.35
    K: np.ndarray | None = None

    def __post_init__(self):
        if not isinstance(self.env, Pendulum):
            raise ContractError("energy swing-up needs the pendulum environment")
        if self.K is None:
            object.__setattr__(self, "K", upright_lqr_gain(self.env))

    def act(self, states, t=0, rng=None) -> np.ndarray:
        s = np.atleast_2d(np.asarray(states, dtype=float))
        env = self.env
        u_max = float(env.hi[0])
        gap = env.energy_top - env.energy(s)
        direction = np.sign(s[:, 1])
        pump = np.where(direction == 0.0, u_max, self.k_e * gap * direction)
        lqr = -(s @ self.K.T)[:, 0]
        u = np.where(np.abs(s[:, 0]) < self.theta_switch, lqr, pump)
        return np.clip(u, env.lo[0], env.hi[0])[:, None]

    def __call__(self, state) -> np.ndarray:
        return self.act(np.asarray(state)[None], 0)[0]


def energy_swingup_action(state, params: EnergySwingup) -> np.ndarray:
    return params(state)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def run_baseline(env: EnvModel, controller, episodes: int, rng, horizon: int | None = None):
    """Mean and population standard deviation of undiscounted returns, as for learned policies."""
    if episodes < 1:
        raise ContractError("episodes must be at least 1")
    policy = controller if hasattr(controller, "act") else FunctionPolicy(controller, env.action_dim)
    H = env.horizon if horizon is None else horizon
    _, _, rewards = rollout_batch(env, policy, H, rng, episodes)
    returns = rewards.sum(axis=1)
    return float(returns.mean()), float(returns.std()) if episodes > 1 else 0.0
