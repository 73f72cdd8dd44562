"""Stochastic nonlinear control benchmarks ``s' = f(s, a) + noise``.

Four models are provided: pendulum swing-up, cart-pole swing-up, pendubot
balance and a planar (2D) quadrotor hover task. Every model integrates its
equations of motion with one semi-implicit Euler step per control period,
wraps angles to ``(-pi, pi]`` and clips velocities (and unbounded positions)
to a documented box, so ``f`` maps the box into itself.

Rewards are negative quadratic costs in the deviation from a target state
and a reference action, which gives iLQR analytic cost derivatives.

All dynamics functions are vectorised over leading axes: ``s`` has shape
``(..., d)`` and ``a`` shape ``(..., action_dim)``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .errors import ContractError, NonFiniteStateError

FULL_STATE = "full-state"
ACCELERATION = "acceleration-coordinates"
NOISE_TARGETS = (FULL_STATE, ACCELERATION)


def wrap_angle(x):
    """Map angles to ``(-pi, pi]``."""
    y = np.mod(np.asarray(x, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    return np.where(y == -math.pi, math.pi, y)


@dataclass(frozen=True, eq=False)
class EnvModel:
    """Base class: shared stepping, noise, reward and bookkeeping.

    Subclasses set the class-level layout (which coordinates are positions,
    velocities, angles; state box; cost weights) and implement
    :meth:`acceleration`.
    """

    name = "base"
    d = 0
    action_dim = 0
    position_idx = ()
    velocity_idx = ()
    angle_idx = ()
    state_low = np.zeros(0)
    state_high = np.zeros(0)
    state_weights = np.zeros(0)
    action_weights = np.zeros(0)
    init_center = np.zeros(0)
    init_halfwidth = np.zeros(0)
    # Per-coordinate scale used to normalise states before featurisation.
    feature_scale = np.zeros(0)

    dt: float = 0.05
    sigma_noise: float = 0.0
    noise_target: str = ACCELERATION
    horizon: int = 200
    action_low: tuple = ()
    action_high: tuple = ()

    def __post_init__(self):
        if not self.dt > 0:
            raise ContractError("dt must be positive")
        if not self.sigma_noise >= 0:
            raise ContractError("sigma_noise must be non-negative")
        if self.noise_target not in NOISE_TARGETS:
            raise ContractError(f"noise_target must be one of {NOISE_TARGETS}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ContractError("horizon must be a positive integer")
        lo, hi = np.asarray(self.action_low, float), np.asarray(self.action_high, float)
        if lo.shape != (self.action_dim,) or hi.shape != (self.action_dim,) or not np.all(lo < hi):
            raise ContractError("action bounds must be well ordered, one pair per action dimension")

    # -- layout ------------------------------------------------------------

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.action_low, dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.action_high, dtype=float)

    @property
    def action_ref(self) -> np.ndarray:
        return np.zeros(self.action_dim)

    @property
    def target(self) -> np.ndarray:
        return np.zeros(self.d)

    @property
    def c_f(self) -> float:
        """Bound on ``|f(s, a)|``: ``f`` maps into the state box."""
        corner = np.maximum(np.abs(self.state_low), np.abs(self.state_high))
        return float(np.linalg.norm(corner))

    @property
    def c_r(self) -> float:
        """Bound on ``|r(s, a)|`` over the state box and action bounds."""
        dev = np.maximum(np.abs(self.state_low - self.target), np.abs(self.state_high - self.target))
        dev[list(self.angle_idx)] = math.pi
        act = np.maximum(np.abs(self.lo - self.action_ref), np.abs(self.hi - self.action_ref))
        return float(self.state_weights @ dev**2 + self.action_weights @ act**2)

    def replace(self, **changes) -> "EnvModel":
        return dataclasses.replace(self, **changes)

    # -- dynamics ----------------------------------------------------------

    def acceleration(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Second derivative of the position coordinates, shape ``(..., len(velocity_idx))``."""
        raise NotImplementedError

    def clip_action(self, a):
        """Clip to the action bounds; returns ``(clipped, was_clipped)``."""
        a = np.asarray(a, dtype=float)
        clipped = np.clip(a, self.lo, self.hi)
        return clipped, bool(np.any(clipped != a))

    def _check(self, s, a):
        s = np.asarray(s, dtype=float)
        a = np.asarray(a, dtype=float)
        if s.shape[-1:] != (self.d,):
            raise ContractError(f"{self.name}: state must have trailing dimension {self.d}, got {s.shape}")
        if a.ndim == 0 and self.action_dim == 1:
            a = a[None]
        if a.shape[-1:] != (self.action_dim,):
            raise ContractError(f"{self.name}: action must have trailing dimension {self.action_dim}, got {a.shape}")
        if not np.all(np.isfinite(s)):
            raise NonFiniteStateError(f"{self.name}: non-finite state {s}")
        return s, a

    def project(self, s: np.ndarray) -> np.ndarray:
        """Wrap angle coordinates and clip everything else to the state box."""
        s = np.array(s, dtype=float, copy=True)
        if self.angle_idx:
            idx = list(self.angle_idx)
            s[..., idx] = wrap_angle(s[..., idx])
        return np.clip(s, self.state_low, self.state_high)

    def f_eval(self, s, a) -> np.ndarray:
        """Deterministic part of the transition: one semi-implicit Euler step."""
        s, a = self._check(s, a)
        a = np.clip(a, self.lo, self.hi)
        pos, vel = list(self.position_idx), list(self.velocity_idx)
        acc = self.acceleration(s, a)
        out = np.array(s, dtype=float, copy=True)
        v_new = np.clip(s[..., vel] + self.dt * acc, self.state_low[vel], self.state_high[vel])
        out[..., vel] = v_new
        out[..., pos] = s[..., pos] + self.dt * v_new
        return self.project(out)

    def noise_coords(self) -> list:
        return list(range(self.d)) if self.noise_target == FULL_STATE else list(self.velocity_idx)

    def add_noise(self, s_mean: np.ndarray, rng) -> np.ndarray:
        if self.sigma_noise == 0.0:
            return s_mean
        idx = self.noise_coords()
        scale = self.sigma_noise if self.noise_target == FULL_STATE else self.sigma_noise * math.sqrt(self.dt)
        out = np.array(s_mean, copy=True)
        out[..., idx] += scale * rng.standard_normal(out[..., idx].shape)
        return self.project(out)

    def step(self, s, a, rng):
        """Noisy transition; returns ``(s_next, reward(s, a))``."""
        s_mean = self.f_eval(s, a)
        return self.add_noise(s_mean, rng), self.reward(s, a)

    def state_diff(self, x, y) -> np.ndarray:
        """``x - y`` with angle coordinates wrapped."""
        diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        if self.angle_idx:
            idx = list(self.angle_idx)
            diff[..., idx] = wrap_angle(diff[..., idx])
        return diff

    def reward(self, s, a):
        """``-(sum_i q_i dev_i^2 + sum_j r_j (a_j - a_ref_j)^2)``, always <= 0."""
        s, a = self._check(s, a)
        a = np.clip(a, self.lo, self.hi)
        dev = self.state_diff(s, self.target)
        du = a - self.action_ref
        out = -(dev**2 @ self.state_weights + du**2 @ self.action_weights)
        return out[()] if np.ndim(out) == 0 else out

    def initial_state(self, rng, size=None) -> np.ndarray:
        """Sample ``center + U(-halfwidth, halfwidth)``, projected onto the box."""
        shape = (self.d,) if size is None else (int(size), self.d)
        s = self.init_center + rng.uniform(-1.0, 1.0, size=shape) * self.init_halfwidth
        return self.project(s)


@dataclass(frozen=True, eq=False)
class Pendulum(EnvModel):
    """Rod pendulum, ``theta = 0`` upright: ``theta'' = 3g/(2l) sin(theta) + 3u/(m l^2)``."""

    name = "pendulum"
    d = 2
    action_dim = 1
    position_idx = (0,)
    velocity_idx = (1,)
    angle_idx = (0,)
    state_low = np.array([-math.pi, -8.0])
    state_high = np.array([math.pi, 8.0])
    state_weights = np.array([1.0, 0.1])
    action_weights = np.array([0.001])
    init_center = np.array([math.pi, 0.0])
    init_halfwidth = np.array([0.1, 0.1])
    feature_scale = np.array([math.pi, 8.0])

    dt: float = 0.05
    horizon: int = 200
    action_low: tuple = (-2.0,)
    action_high: tuple = (2.0,)
    g: float = 10.0
    m: float = 1.0
    l: float = 1.0

    def acceleration(self, s, a):
        return 3.0 * self.g / (2.0 * self.l) * np.sin(s[..., :1]) + 3.0 * a / (self.m * self.l**2)

    def energy(self, s):
        """Mechanical energy ``(m l^2 / 6) theta_dot^2 + m g (l/2) cos(theta)``; upright rest is the maximum ``m g l / 2``."""
        s = np.asarray(s, dtype=float)
        return self.m * self.l**2 / 6.0 * s[..., 1] ** 2 + self.m * self.g * self.l / 2.0 * np.cos(s[..., 0])

    @property
    def energy_top(self) -> float:
        return self.m * self.g * self.l / 2.0


@dataclass(frozen=True, eq=False)
class CartPole(EnvModel):
    """Cart-pole swing-up; state ``(x, x_dot, theta, theta_dot)``, ``theta = 0`` upright.

    Uses the classic equations with ``l`` the half-length of the pole.
    """

    name = "cartpole"
    d = 4
    action_dim = 1
    position_idx = (0, 2)
    velocity_idx = (1, 3)
    angle_idx = (2,)
    state_low = np.array([-3.0, -10.0, -math.pi, -15.0])
    state_high = np.array([3.0, 10.0, math.pi, 15.0])
    state_weights = np.array([0.05, 0.0, 1.0, 0.1])
    action_weights = np.array([0.001])
    init_center = np.array([0.0, 0.0, math.pi, 0.0])
    init_halfwidth = np.array([0.05, 0.05, 0.05, 0.05])
    feature_scale = np.array([3.0, 10.0, math.pi, 15.0])

    dt: float = 0.02
    horizon: int = 500
    action_low: tuple = (-10.0,)
    action_high: tuple = (10.0,)
    g: float = 9.81
    m_cart: float = 1.0
    m_pole: float = 0.1
    l: float = 0.5

    def acceleration(self, s, a):
        theta, theta_dot = s[..., 2], s[..., 3]
        force = a[..., 0]
        total = self.m_cart + self.m_pole
        sin, cos = np.sin(theta), np.cos(theta)
        temp = (force + self.m_pole * self.l * theta_dot**2 * sin) / total
        theta_acc = (self.g * sin - cos * temp) / (self.l * (4.0 / 3.0 - self.m_pole * cos**2 / total))
        x_acc = temp - self.m_pole * self.l * theta_acc * cos / total
        return np.stack([x_acc, theta_acc], axis=-1)


@dataclass(frozen=True, eq=False)
class Pendubot(EnvModel):
    """Two-link arm actuated at the shoulder only; state ``(q1, q2, q1_dot, q2_dot)``.

    ``q1`` is measured from the upward vertical, ``q2`` relative to link 1, so
    ``q = 0`` is the (unstable) balanced configuration.
    """

    name = "pendubot"
    d = 4
    action_dim = 1
    position_idx = (0, 1)
    velocity_idx = (2, 3)
    angle_idx = (0, 1)
    state_low = np.array([-math.pi, -math.pi, -10.0, -20.0])
    state_high = np.array([math.pi, math.pi, 10.0, 20.0])
    state_weights = np.array([1.0, 1.0, 0.1, 0.1])
    action_weights = np.array([0.001])
    init_center = np.zeros(4)
    init_halfwidth = np.array([0.05, 0.05, 0.05, 0.05])
    feature_scale = np.array([math.pi, math.pi, 10.0, 20.0])

    dt: float = 0.01
    horizon: int = 400
    action_low: tuple = (-10.0,)
    action_high: tuple = (10.0,)
    g: float = 9.81
    m1: float = 1.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    lc1: float = 0.5
    lc2: float = 0.5

    def mass_matrix(self, q2):
        I1 = self.m1 * self.l1**2 / 12.0
        I2 = self.m2 * self.l2**2 / 12.0
        c2 = np.cos(q2)
        d11 = self.m1 * self.lc1**2 + self.m2 * (self.l1**2 + self.lc2**2 + 2.0 * self.l1 * self.lc2 * c2) + I1 + I2
        d12 = self.m2 * (self.lc2**2 + self.l1 * self.lc2 * c2) + I2
        d22 = np.full_like(d11, self.m2 * self.lc2**2 + I2)
        return d11, d12, d22

    def acceleration(self, s, a):
        q1, q2, dq1, dq2 = (s[..., i] for i in range(4))
        d11, d12, d22 = self.mass_matrix(q2)
        h = self.m2 * self.l1 * self.lc2 * np.sin(q2)
        coriolis1 = -h * (2.0 * dq1 * dq2 + dq2**2)
        coriolis2 = h * dq1**2
        # Potential energy is maximal upright, so gravity pushes away from q = 0.
        grav2 = -self.m2 * self.lc2 * self.g * np.sin(q1 + q2)
        grav1 = -(self.m1 * self.lc1 + self.m2 * self.l1) * self.g * np.sin(q1) + grav2
        rhs1 = a[..., 0] - coriolis1 - grav1
        rhs2 = -coriolis2 - grav2
        det = d11 * d22 - d12**2
        return np.stack([(d22 * rhs1 - d12 * rhs2) / det, (d11 * rhs2 - d12 * rhs1) / det], axis=-1)


@dataclass(frozen=True, eq=False)
class Drone2D(EnvModel):
    """Planar quadrotor hovering at the origin; state ``(x, y, x_dot, y_dot, phi, phi_dot)``."""

    name = "drone2d"
    d = 6
    action_dim = 2
    position_idx = (0, 1, 4)
    velocity_idx = (2, 3, 5)
    angle_idx = (4,)
    state_low = np.array([-5.0, -5.0, -10.0, -10.0, -math.pi, -20.0])
    state_high = np.array([5.0, 5.0, 10.0, 10.0, math.pi, 20.0])
    state_weights = np.array([1.0, 1.0, 0.1, 0.1, 1.0, 0.0])
    action_weights = np.array([0.001, 0.001])
    init_center = np.zeros(6)
    init_halfwidth = np.array([0.5, 0.5, 0.1, 0.1, 0.1, 0.1])
    feature_scale = np.array([5.0, 5.0, 10.0, 10.0, math.pi, 20.0])

    dt: float = 0.02
    horizon: int = 300
    action_low: tuple = (0.0, 0.0)
    action_high: tuple = (10.0, 10.0)
    g: float = 10.0
    m: float = 1.0
    arm: float = 0.3
    inertia: float = 0.05

    @property
    def action_ref(self) -> np.ndarray:
        return np.full(2, self.m * self.g / 2.0)

    def acceleration(self, s, a):
        phi = s[..., 4]
        thrust = a[..., 0] + a[..., 1]
        x_acc = -thrust * np.sin(phi) / self.m
        y_acc = thrust * np.cos(phi) / self.m - self.g
        phi_acc = (a[..., 1] - a[..., 0]) * self.arm / self.inertia
        return np.stack([x_acc, y_acc, phi_acc], axis=-1)


ENVS = {cls.name: cls for cls in (Pendulum, CartPole, Pendubot, Drone2D)}


def make_env(name: str, **overrides) -> EnvModel:
    """Build an environment by name with field overrides (``dt``, ``sigma_noise``, ...)."""
    try:
        cls = ENVS[name]
    except KeyError:
        raise ContractError(f"unknown environment {name!r}; choose from {sorted(ENVS)}") from None
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(overrides) - names
    if unknown:
        raise ContractError(f"unknown {name} parameters: {sorted(unknown)}")
    for key in ("action_low", "action_high"):
        if key in overrides:
            overrides[key] = tuple(np.atleast_1d(overrides[key]).astype(float))
    return cls(**overrides)


def action_grid(env: EnvModel, points_per_dim: int = 15) -> np.ndarray:
    """Uniform grid over the action box: ``points_per_dim ** action_dim`` rows."""
    if points_per_dim < 1:
        raise ContractError("points_per_dim must be positive")
    axes = [np.linspace(lo, hi, points_per_dim) if points_per_dim > 1 else np.array([(lo + hi) / 2.0])
            for lo, hi in zip(env.lo, env.hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=-1)


# ---------------------------------------------------------------------------
# Policies, rollouts and sampling
# ---------------------------------------------------------------------------


class Policy(Protocol):
    def act(self, states: np.ndarray, t: int, rng) -> np.ndarray:
        """Actions for a batch of states ``(B, d)`` at episode step ``t``; returns ``(B, action_dim)``."""


class FunctionPolicy:
    """Adapts a per-state function ``fn(state) -> action`` to the batch interface."""

    def __init__(self, fn: Callable, action_dim: int = 1):
        self.fn = fn
        self.action_dim = action_dim

    def act(self, states, t, rng):
        return np.array([np.atleast_1d(self.fn(s)) for s in np.atleast_2d(states)], dtype=float)


class ConstantPolicy:
    def __init__(self, action):
        self.action = np.atleast_1d(np.asarray(action, dtype=float))

    def act(self, states, t, rng):
        return np.broadcast_to(self.action, (np.atleast_2d(states).shape[0], self.action.size)).copy()


@dataclass
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray


def _check_policy_output(env: EnvModel, actions, batch: int) -> np.ndarray:
    actions = np.asarray(actions, dtype=float)
    if actions.shape != (batch, env.action_dim):
        raise ContractError(f"policy returned actions of shape {actions.shape}, expected {(batch, env.action_dim)}")
    return actions


def rollout_batch(env: EnvModel, policy: Policy, H: int, rng, n_episodes: int = 1, initial_states=None):
    """Simulate ``n_episodes`` episodes in lock-step.

    Returns states ``(B, H+1, d)``, actions ``(B, H, action_dim)`` and rewards ``(B, H)``.
    """
    if H < 1:
        raise ContractError("H must be at least 1")
    rng = np.random.default_rng(rng)
    if initial_states is None:
        s = env.initial_state(rng, size=n_episodes)
    else:
        s = np.array(np.atleast_2d(initial_states), dtype=float)
        if s.shape[-1] != env.d:
            raise ContractError(f"initial states must have dimension {env.d}")
    B = s.shape[0]
    states = np.empty((B, H + 1, env.d))
    actions = np.empty((B, H, env.action_dim))
    rewards = np.empty((B, H))
    states[:, 0] = s
    for t in range(H):
        a = _check_policy_output(env, policy.act(s, t, rng), B)
        s, r = env.step(s, a, rng)
        actions[:, t] = a
        rewards[:, t] = r
        states[:, t + 1] = s
    return states, actions, rewards


def discounted(rewards: np.ndarray, gamma: float) -> np.ndarray:
    weights = gamma ** np.arange(rewards.shape[-1])
    return rewards @ weights


def rollout(env: EnvModel, policy: Policy, H: int, rng, gamma: float = 0.99, initial_state=None):
    """One episode; returns ``(Trajectory, undiscounted_return, discounted_return)``."""
    init = None if initial_state is None else np.asarray(initial_state, dtype=float)[None, :]
    states, actions, rewards = rollout_batch(env, policy, H, rng, 1, init)
    traj = Trajectory(states[0], actions[0], rewards[0])
    return traj, float(rewards[0].sum()), float(discounted(rewards[0], gamma))


@dataclass
class SampleBatch:
    """Transitions ``(s, a, r, s', a')`` with ``a' ~ policy(s')``."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    a_next: np.ndarray
    policy_id: str = ""
    burn_in: int = 0
    stride: int = 1
    seed: object = None

    def __len__(self) -> int:
        return self.s.shape[0]


def collect_stationary_batch(env: EnvModel, policy: Policy, n: int, burn_in: int = 200, stride: int = 10,
                             rng=None, n_chains: int = 1, policy_id: str = "") -> SampleBatch:
    """Thinned on-policy samples approximating the stationary distribution.

    ``n_chains`` chains run in lock-step; each restarts from the initial-state
    distribution every ``env.horizon`` steps. The first ``burn_in`` steps are
    discarded, then every ``stride``-th transition is kept until exactly ``n``
    tuples are collected. Each kept tuple gets a fresh ``a' ~ policy(s')``.
    """
    if n < 1:
        raise ContractError("n must be at least 1")
    if stride < 1 or burn_in < 0 or n_chains < 1:
        raise ContractError("need stride >= 1, burn_in >= 0, n_chains >= 1")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng)
    s = env.initial_state(rng, size=n_chains)
    rows = {k: [] for k in ("s", "a", "r", "s_next", "a_next")}
    count = 0
    step = 0
    while count < n:
        t = step % env.horizon
        if t == 0 and step > 0:
            s = env.initial_state(rng, size=n_chains)
        a = _check_policy_output(env, policy.act(s, t, rng), n_chains)
        s_next, r = env.step(s, a, rng)
        if step >= burn_in and (step - burn_in) % stride == 0:
            a_next = _check_policy_output(env, policy.act(s_next, t + 1, rng), n_chains)
            for key, val in zip(rows, (s, a, r, s_next, a_next)):
                rows[key].append(np.array(val, copy=True))
            count += n_chains
        s = s_next
        step += 1
    arrays = {k: np.concatenate(v, axis=0)[:n] if np.ndim(v[0]) > 1 else np.concatenate(v)[:n]
              for k, v in rows.items()}
    return SampleBatch(**arrays, policy_id=policy_id, burn_in=burn_in, stride=stride, seed=seed)
