import warnings

import numpy as np
import pytest

from sdec import spectral_features as sf
from sdec.envs import Pendulum
from sdec.errors import ContractError, RankDeficiencyError
from sdec.oracles import random_tabular_mdp, stationary_distribution, tabular_policy_q
from sdec.policy_eval import (
    LspeConfig, QWeights, ScaledFeatureMap, TabularOneHot, embedded_dim, env_feature_map, feature_dim, featurize,
    lspe, lspe_exact_tabular, projected_bellman_residual, q_value, regularity_diagnostics, sample_tabular_batch,
    upsilon_from_features,
)


def random_policy(S, A, rng):
    p = rng.random((S, A)) + 0.1
    return p / p.sum(1, keepdims=True)


@pytest.fixture
def tabular():
    rng = np.random.default_rng(0)
    mdp = random_tabular_mdp(6, 3, 0.9, rng)
    return mdp, random_policy(6, 3, rng)


@pytest.fixture
def pend_maps():
    env = Pendulum()
    D = embedded_dim(env)
    rff = sf.sample_random_features(sf.KernelParams(1.0, 0.0, D), 16, sf.PAIRED_TRIG, rng=0)
    phase = sf.sample_random_features(sf.KernelParams(1.0, 0.0, D), 16, sf.PHASE_SHIFTED, 2.0, rng=0)
    pn = sf.KernelParams(0.5, 0.3, D)
    nys, _ = sf.build_nystrom(pn, sf.sample_landmarks(pn, 16, sf.UNIFORM_BOX, 0, -1, 1), 16)
    return env, {"paired": env_feature_map(env, rff), "phase": env_feature_map(env, phase),
                 "nys": env_feature_map(env, nys)}


def test_featurize_lengths_and_reward(pend_maps):
    env, maps = pend_maps
    s, a = np.array([0.4, -1.0]), np.array([0.7])
    assert featurize(maps["paired"], env, s, a).shape == (33,)
    assert featurize(maps["phase"], env, s, a).shape == (17,)
    assert featurize(maps["nys"], env, s, a).shape == (17,)
    for fm in maps.values():
        phi = featurize(fm, env, s, a)
        assert phi[-1] == env.reward(s, a)
        np.testing.assert_array_equal(phi, featurize(fm, env, s, a))
        assert feature_dim(fm) == phi.size


def test_featurize_uses_mean_next_state(pend_maps):
    env, maps = pend_maps
    fm = maps["phase"]
    s, a = np.array([1.0, 2.0]), np.array([-1.0])
    np.testing.assert_array_equal(featurize(fm, env, s, a)[:-1], fm.transform(env.f_eval(s, a)))


def test_featurize_propagates_domain_error():
    env = Pendulum()
    p = sf.KernelParams(1.0, 0.0, 3)
    nys, _ = sf.build_nystrom(p, sf.sample_landmarks(p, 4, sf.UNIFORM_BOX, 0, -1, 1), 4)

    class Eq20:
        dim = nys.m
        def transform(self, x):
            return sf.eval_psi_nys(nys, x)

    from sdec.errors import DomainError
    with pytest.raises(DomainError):
        featurize(env_feature_map(env, Eq20()), env, np.zeros(2), np.zeros(1))


def test_scaled_map_embedding():
    env = Pendulum()
    fm = env_feature_map(env, sf.sample_random_features(sf.KernelParams(1.0, 0.0, 3), 4, rng=0))
    e = fm.embed(np.array([np.pi, 4.0]))
    np.testing.assert_allclose(e, [0.5, -1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(fm.embed(np.array([np.pi, 0.0])), fm.embed(np.array([-np.pi, 0.0])), atol=1e-15)
    with pytest.raises(ContractError):
        ScaledFeatureMap(fm.inner, np.array([1.0, 0.0]))


def test_lspe_config_validation():
    with pytest.raises(ContractError):
        LspeConfig(T=-1)
    with pytest.raises(ContractError):
        LspeConfig(ridge=-1.0)
    with pytest.raises(ContractError):
        LspeConfig(gamma=1.0)
    assert LspeConfig().resolve(1000) == (15, 1e-3)


def test_lspe_t_zero(tabular):
    mdp, pi = tabular
    b = sample_tabular_batch(mdp, pi, 200, rng=1)
    qw = lspe(b, TabularOneHot(6, 3), None, LspeConfig(T=0))
    assert np.all(qw.w == 0)


def test_lspe_gamma_zero_is_cell_mean():
    rng = np.random.default_rng(1)
    mdp = random_tabular_mdp(3, 2, 0.5, rng)
    pi = np.full((3, 2), 0.5)
    b = sample_tabular_batch(mdp, pi, 500, rng=2, weights=np.full((3, 2), 1 / 6))
    # make rewards noisy so cell means are non-trivial
    b.r = b.r + rng.normal(size=len(b))
    qw = lspe(b, TabularOneHot(3, 2), None, LspeConfig(T=5, ridge=0.0, gamma=0.0))
    cells = b.s * 2 + b.a
    means = np.array([b.r[cells == c].mean() for c in range(6)])
    np.testing.assert_allclose(qw.w, means, atol=1e-10)


def test_lspe_ridge_zero_singular():
    rng = np.random.default_rng(1)
    mdp = random_tabular_mdp(3, 2, 0.5, rng)
    w = np.zeros((3, 2))
    w[0, 0] = 1.0
    b = sample_tabular_batch(mdp, np.full((3, 2), 0.5), 50, rng=2, weights=w)
    with pytest.raises(RankDeficiencyError):
        lspe(b, TabularOneHot(3, 2), None, LspeConfig(T=3, ridge=0.0))


def test_lspe_warns_on_small_batch(pend_maps):
    env, maps = pend_maps
    from sdec.envs import ConstantPolicy, collect_stationary_batch
    b = collect_stationary_batch(env, ConstantPolicy([0.0]), 10, 0, 1, 0)
    with pytest.warns(UserWarning):
        lspe(b, maps["phase"], env, LspeConfig(T=2))


def test_exact_lspe_matches_oracle(tabular):
    mdp, pi = tabular
    qw = lspe_exact_tabular(mdp, pi, LspeConfig(T=300, gamma=0.9))
    err = np.max(np.abs(qw.w.reshape(6, 3) - tabular_policy_q(mdp, pi)))
    assert err <= 1e-6


def test_exact_lspe_fixed_point_and_contraction(tabular):
    mdp, pi = tabular
    its = lspe_exact_tabular(mdp, pi, LspeConfig(T=300, gamma=0.9), history=True)
    assert projected_bellman_residual(mdp, pi, its[-1], 0.9) <= 1e-10
    nu = stationary_distribution(mdp, pi).reshape(-1)
    dist = np.sqrt(((its[1:] - its[:-1]) ** 2) @ nu)
    ok = dist[:-1] > 1e-9  # below this, rounding dominates the ratio
    assert np.all(dist[1:][ok] / dist[:-1][ok] <= 0.9 + 1e-6)


def test_sampled_lspe_large_n(tabular):
    mdp, pi = tabular
    exact = lspe_exact_tabular(mdp, pi, LspeConfig(T=300, gamma=0.9)).w
    b = sample_tabular_batch(mdp, pi, 1_000_000, rng=3)
    est = lspe(b, TabularOneHot(6, 3), None, LspeConfig(T=300, ridge=0.0, gamma=0.9)).w
    assert np.max(np.abs(est - exact)) <= 1e-2


def test_q_value_examples(pend_maps):
    env, maps = pend_maps
    fm = maps["phase"]
    rng = np.random.default_rng(4)
    s = rng.uniform(env.state_low, env.state_high, size=(20, 2))
    a = rng.uniform(-2, 2, size=(20, 1))
    dim = feature_dim(fm)
    assert np.all(q_value(QWeights(np.zeros(dim), fm, 0.9), fm, env, s, a) == 0)
    e = np.zeros(dim)
    e[-1] = 1.0
    np.testing.assert_array_equal(q_value(QWeights(e, fm, 0.9), fm, env, s, a), env.reward(s, a))
    w1, w2 = rng.normal(size=dim), rng.normal(size=dim)
    q12 = q_value(QWeights(w1 + w2, fm, 0.9), fm, env, s, a)
    q1 = q_value(QWeights(w1, fm, 0.9), fm, env, s, a)
    q2 = q_value(QWeights(w2, fm, 0.9), fm, env, s, a)
    np.testing.assert_allclose(q12, q1 + q2, rtol=1e-12, atol=1e-12)


def test_upsilon_one_hot_uniform():
    mdp = random_tabular_mdp(4, 2, 0.5, np.random.default_rng(0))
    b = sample_tabular_batch(mdp, np.full((4, 2), 0.5), 80_000, rng=1, weights=np.full((4, 2), 1 / 8))
    u1, _ = regularity_diagnostics(b, TabularOneHot(4, 2), None, 0.9)
    assert u1 == pytest.approx(1 / 8, abs=0.01)


def test_upsilon_gamma_zero_and_duplicates():
    rng = np.random.default_rng(2)
    Phi = rng.normal(size=(500, 4))
    Phi_next = rng.normal(size=(500, 4))
    u1, u2 = upsilon_from_features(Phi, Phi_next, 0.0)
    assert u1 == pytest.approx(u2, rel=1e-12)
    dup = np.column_stack([Phi, Phi[:, 0]])
    u1, _ = upsilon_from_features(dup, np.column_stack([Phi_next, Phi_next[:, 0]]), 0.5)
    assert u1 <= 1e-10


def test_lspe_divergence_aborts():
    from sdec.errors import NumericalAbort
    from sdec.policy_eval import lspe_iterate
    G, M, b = np.eye(2), 2.0 * np.eye(2), np.ones(2)
    with pytest.raises(NumericalAbort):
        lspe_iterate(G, b, M, 0.9, 5000, 0.0)
