import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdec import envs
from sdec.envs import (
    ACCELERATION, FULL_STATE, CartPole, ConstantPolicy, Drone2D, FunctionPolicy, Pendubot, Pendulum,
    action_grid, collect_stationary_batch, discounted, make_env, rollout, rollout_batch, wrap_angle,
)
from sdec.errors import ContractError, NonFiniteStateError

ALL = [Pendulum, CartPole, Pendubot, Drone2D]


def pendulum_step_oracle(theta, theta_dot, u, dt=0.05, g=10.0, m=1.0, l=1.0):
    """Scalar semi-implicit Euler written out by hand."""
    u = min(max(u, -2.0), 2.0)
    acc = 3 * g / (2 * l) * math.sin(theta) + 3 * u / (m * l * l)
    v = min(max(theta_dot + dt * acc, -8.0), 8.0)
    th = theta + dt * v
    th = math.atan2(math.sin(th), math.cos(th))
    if th == -math.pi:
        th = math.pi
    return th, v


def test_wrap_angle_range():
    x = np.linspace(-20, 20, 4001)
    y = wrap_angle(x)
    assert np.all(y > -math.pi) and np.all(y <= math.pi)
    np.testing.assert_allclose(np.sin(y), np.sin(x), atol=1e-12)
    assert wrap_angle(-math.pi) == math.pi


def test_pendulum_equilibria():
    env = Pendulum()
    np.testing.assert_array_equal(env.f_eval([0.0, 0.0], [0.0]), [0.0, 0.0])
    out = env.f_eval([math.pi, 0.0], [0.0])
    assert out[0] == pytest.approx(math.pi, abs=1e-12) and abs(out[1]) < 1e-12


def test_drone_hover():
    env = Drone2D()
    s = np.array([0.3, -1.0, 0.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(env.f_eval(s, env.action_ref), s, atol=1e-15)


@settings(max_examples=100)
@given(st.floats(-math.pi, math.pi), st.floats(-8, 8), st.floats(-3, 3))
def test_pendulum_matches_oracle(theta, theta_dot, u):
    env = Pendulum()
    th, v = pendulum_step_oracle(theta, theta_dot, u)
    out = env.f_eval([theta, theta_dot], [u])
    assert out[1] == pytest.approx(v, abs=1e-12)
    assert abs(wrap_angle(out[0] - th)) <= 1e-12


def test_cartpole_matches_textbook_form():
    env = CartPole()
    x, xd, th, thd, F = 0.2, -0.5, 0.4, 1.0, 3.0
    mc, mp, l, g = 1.0, 0.1, 0.5, 9.81
    temp = (F + mp * l * thd**2 * math.sin(th)) / (mc + mp)
    tha = (g * math.sin(th) - math.cos(th) * temp) / (l * (4 / 3 - mp * math.cos(th) ** 2 / (mc + mp)))
    xa = temp - mp * l * tha * math.cos(th) / (mc + mp)
    out = env.f_eval([x, xd, th, thd], [F])
    np.testing.assert_allclose(out, [x + 0.02 * (xd + 0.02 * xa), xd + 0.02 * xa, th + 0.02 * (thd + 0.02 * tha),
                                     thd + 0.02 * tha], atol=1e-12)


def test_pendubot_upright_equilibrium_and_energy():
    env = Pendubot()
    np.testing.assert_allclose(env.f_eval(np.zeros(4), [0.0]), 0.0, atol=1e-15)
    # Without torque, a Lagrangian system conserves energy; check the continuous vector field.
    rng = np.random.default_rng(0)
    for _ in range(5):
        q = rng.uniform(-1, 1, 2)
        dq = rng.uniform(-1, 1, 2)
        acc = env.acceleration(np.r_[q, dq], np.zeros(1))
        d11, d12, d22 = env.mass_matrix(q[1])
        M = np.array([[d11, d12], [d12, d22]])
        # d/dt of kinetic energy equals minus the rate of potential energy
        h = 1e-6
        def V(qq):
            y1 = env.lc1 * math.cos(qq[0])
            y2 = env.l1 * math.cos(qq[0]) + env.lc2 * math.cos(qq[0] + qq[1])
            return env.g * (env.m1 * y1 + env.m2 * y2)
        def T(qq, vv):
            a, b, c = env.mass_matrix(qq[1])
            return 0.5 * vv @ np.array([[a, b], [b, c]]) @ vv
        dT = (T(q + h * dq, dq + h * acc) - T(q - h * dq, dq - h * acc)) / (2 * h)
        dV = (V(q + h * dq) - V(q - h * dq)) / (2 * h)
        assert dT + dV == pytest.approx(0.0, abs=1e-6)
        assert np.linalg.eigvalsh(M).min() > 0


@pytest.mark.parametrize("cls", ALL)
def test_step_without_noise_is_f_eval(cls):
    env = cls()
    rng = np.random.default_rng(0)
    s = env.initial_state(rng)
    a = rng.uniform(env.lo, env.hi)
    s1, r = env.step(s, a, rng)
    np.testing.assert_array_equal(s1, env.f_eval(s, a))
    assert r == env.reward(s, a)


@pytest.mark.parametrize("target", [FULL_STATE, ACCELERATION])
def test_noisy_step_mean(target):
    env = Pendulum(sigma_noise=0.3, noise_target=target)
    s, a = np.array([1.0, 0.5]), np.array([0.4])
    n = 100_000
    out, _ = env.step(np.repeat(s[None], n, 0), np.repeat(a[None], n, 0), np.random.default_rng(1))
    mean = env.f_eval(s, a)
    scale = 0.3 if target == FULL_STATE else 0.3 * math.sqrt(env.dt)
    se = scale / math.sqrt(n)
    diff = env.state_diff(out.mean(0), mean)
    assert np.all(np.abs(diff) <= 4 * se)
    if target == ACCELERATION:
        assert np.all(out[:, 0] == mean[0])


def test_step_deterministic_given_seed():
    env = Drone2D(sigma_noise=0.5)
    s = env.initial_state(np.random.default_rng(0))
    a = env.action_ref
    one = env.step(s, a, np.random.default_rng(5))
    two = env.step(s, a, np.random.default_rng(5))
    np.testing.assert_array_equal(one[0], two[0])


def test_non_finite_state_raises():
    with pytest.raises(NonFiniteStateError):
        Pendulum().f_eval([np.nan, 0.0], [0.0])


def test_bad_shapes_and_params():
    with pytest.raises(ContractError):
        Pendulum().f_eval([0.0, 0.0, 0.0], [0.0])
    with pytest.raises(ContractError):
        Pendulum(dt=0.0)
    with pytest.raises(ContractError):
        Pendulum(sigma_noise=-1.0)
    with pytest.raises(ContractError):
        Pendulum(action_low=(2.0,), action_high=(-2.0,))
    with pytest.raises(ContractError):
        make_env("acrobot")
    with pytest.raises(ContractError):
        make_env("pendulum", friction=1.0)


def test_make_env_overrides():
    env = make_env("pendulum", sigma_noise=0.1, action_low=[-1.0], action_high=[1.0])
    assert env.sigma_noise == 0.1 and env.action_low == (-1.0,)


def test_clip_action_flag():
    env = Pendulum()
    assert env.clip_action([3.0]) [1] is True
    clipped, flag = env.clip_action([1.0])
    assert flag is False and clipped[0] == 1.0


def test_reward_examples():
    env = Pendulum()
    assert env.reward([0.0, 0.0], [0.0]) == 0.0
    assert env.reward([math.pi, 0.0], [0.0]) == pytest.approx(-math.pi**2, abs=1e-12)


@pytest.mark.parametrize("cls", ALL)
def test_rewards_nonpositive_and_bounded(cls):
    env = cls()
    rng = np.random.default_rng(1)
    s = rng.uniform(env.state_low, env.state_high, size=(5000, env.d))
    a = rng.uniform(env.lo - 1, env.hi + 1, size=(5000, env.action_dim))
    r = env.reward(s, a)
    assert np.all(r <= 0) and np.all(-r <= env.c_r + 1e-9)
    nxt = env.f_eval(s, a)
    assert np.all(nxt >= env.state_low) and np.all(nxt <= env.state_high)
    assert np.all(np.linalg.norm(nxt, axis=1) <= env.c_f + 1e-12)


def test_pendulum_energy_drift():
    env = Pendulum()
    s = np.array([math.pi - 0.05, 0.0])
    drift = []
    for _ in range(200):
        s2 = env.f_eval(s, [0.0])
        drift.append(abs(env.energy(s2) - env.energy(s)))
        s = s2
    assert max(drift) <= 1e-3


def test_action_grid():
    g = action_grid(Pendulum())
    assert g.shape == (15, 1) and g[0, 0] == -2 and g[-1, 0] == 2
    g2 = action_grid(Drone2D(), 15)
    assert g2.shape == (225, 2)
    assert len({tuple(r) for r in g2}) == 225
    assert action_grid(Pendulum(), 1)[0, 0] == 0.0


def test_rollout_contracts():
    env = Pendulum()
    _, ret, disc = rollout(env, ConstantPolicy([0.0]), 1, 0)
    assert ret == disc
    traj, ret, disc = rollout(env, ConstantPolicy([0.5]), 10, 0, gamma=0.0)
    assert disc == traj.rewards[0]
    assert ret == pytest.approx(traj.rewards.sum())
    with pytest.raises(ContractError):
        rollout(env, ConstantPolicy([0.0, 0.0]), 5, 0)
    with pytest.raises(ContractError):
        rollout(env, ConstantPolicy([0.0]), 0, 0)


def test_zero_torque_return():
    env = Pendulum()
    _, _, R = rollout_batch(env, ConstantPolicy([0.0]), env.horizon, 0, n_episodes=20)
    target = env.horizon * -math.pi**2
    assert np.all(np.abs(R.sum(1) - target) <= 0.05 * abs(target))


def test_discounted():
    r = np.array([1.0, 2.0, 3.0])
    assert discounted(r, 0.5) == pytest.approx(1 + 1 + 0.75)


def test_batch_raw_trajectory():
    env = Pendulum()
    pol = FunctionPolicy(lambda s: [-np.sign(s[1]) * 1.5])
    batch = collect_stationary_batch(env, pol, env.horizon, burn_in=0, stride=1, rng=3)
    states, actions, rewards = rollout_batch(env, pol, env.horizon, 3, 1)
    np.testing.assert_array_equal(batch.s, states[0, :-1])
    np.testing.assert_array_equal(batch.s_next, states[0, 1:])
    np.testing.assert_array_equal(batch.a, actions[0])
    np.testing.assert_array_equal(batch.r, rewards[0])


@pytest.mark.parametrize("n", [1, 7, 333])
def test_batch_size_exact(n):
    env = Pendulum()
    b = collect_stationary_batch(env, ConstantPolicy([0.0]), n, burn_in=5, stride=3, rng=0, n_chains=4)
    assert len(b) == n and b.a_next.shape == (n, 1)


def test_batch_determinism_and_next_action():
    env = Pendulum(sigma_noise=0.5)
    rng_pol = lambda states, t, rng: rng.uniform(-2, 2, size=(len(states), 1))  # noqa: E731
    pol = type("P", (), {"act": staticmethod(rng_pol)})()
    b1 = collect_stationary_batch(env, pol, 100, rng=9)
    b2 = collect_stationary_batch(env, pol, 100, rng=9)
    np.testing.assert_array_equal(b1.s, b2.s)
    np.testing.assert_array_equal(b1.a_next, b2.a_next)
    assert np.all(np.abs(b1.a_next) <= 2)


def test_batch_histogram_stabilizes():
    env = Pendulum(sigma_noise=1.0)
    pol = ConstantPolicy([0.0])
    bins = np.linspace(-math.pi, math.pi, 9)
    h = [np.histogram(collect_stationary_batch(env, pol, 10_000, rng=seed, n_chains=20).s[:, 0], bins)[0] / 1e4
         for seed in (1, 2)]
    assert 0.5 * np.abs(h[0] - h[1]).sum() <= 0.1


def test_batch_rejects_bad_args():
    with pytest.raises(ContractError):
        collect_stationary_batch(Pendulum(), ConstantPolicy([0.0]), 0)
