import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distctx.contexts import (
    BilinearFeatures,
    ContextDistribution,
    Environment,
    QuadraticFeatures,
    best_action,
    make_bilinear_env,
    make_synthetic_env,
    monte_carlo_psi,
    psi_batch,
    psi_expected,
    sample_round,
    synthetic_theta,
)
from distctx.errors import ContractError

PROBES = 2_000


@pytest.fixture(scope="module")
def env():
    return make_synthetic_env(3, n_probes=PROBES)


# -- distributions ---------------------------------------------------------


def test_gaussian_rejects_negative_variance():
    with pytest.raises(ContractError):
        ContextDistribution.gaussian([0.0], [-1.0])


def test_empirical_weights_must_sum_to_one():
    with pytest.raises(ContractError):
        ContextDistribution.empirical([[0.0], [1.0]], [0.5, 0.6])
    ContextDistribution.empirical([[0.0], [1.0]], [0.25, 0.75])


def test_dirac_sample_is_exact():
    mu = ContextDistribution.dirac([1.5, -2.0])
    np.testing.assert_array_equal(mu.sample(np.random.default_rng(0), 4), np.tile([1.5, -2.0], (4, 1)))


# -- feature maps ----------------------------------------------------------


def test_quadratic_scalar_example():
    np.testing.assert_array_equal(QuadraticFeatures(1).phi([2.0], [3.0]), [4.0, 9.0, 6.0])


def test_quadratic_zero():
    np.testing.assert_array_equal(QuadraticFeatures(3).phi(np.zeros(3), np.zeros(3)), np.zeros(9))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=5, max_size=5))
def test_quadratic_reward_zero_when_action_equals_context(x):
    phi = QuadraticFeatures(5).phi(x, x)
    assert phi @ synthetic_theta(5) == pytest.approx(0.0, abs=1e-9)


def test_quadratic_dimension_mismatch():
    with pytest.raises(ContractError):
        QuadraticFeatures(2).phi([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])


def test_bilinear_scalar_example():
    np.testing.assert_array_equal(BilinearFeatures(1).phi([3.0], [2.0]), [6.0])


# -- psi ---------------------------------------------------------------------


def test_psi_dirac_is_phi_bitwise():
    fmap = QuadraticFeatures(5)
    rng = np.random.default_rng(4)
    x, c = rng.standard_normal((3, 5)), rng.standard_normal(5)
    got = psi_batch(fmap, x, ContextDistribution.dirac(c))
    assert np.array_equal(got, fmap.phi_batch(x, c))


def test_psi_gaussian_closed_form():
    mu = ContextDistribution.gaussian([1.0], [1.0])
    np.testing.assert_array_equal(psi_expected(QuadraticFeatures(1), [2.0], mu), [4.0, 2.0, 2.0])


def test_monte_carlo_within_three_standard_errors():
    fmap, mu = QuadraticFeatures(1), ContextDistribution.gaussian([1.0], [1.0])
    n = 10_000
    est = monte_carlo_psi(fmap, np.array([[2.0]]), mu, n_samples=n, seed=9)[0]
    samples = np.array([fmap.phi([2.0], c) for c in mu.sample(np.random.default_rng(9), n)])
    se = samples.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(est - [4.0, 2.0, 2.0]) <= 3 * se + 1e-15)


def test_psi_vanishing_covariance_converges_to_phi():
    rng = np.random.default_rng(2)
    fmap, m = QuadraticFeatures(5), rng.standard_normal(5)
    x = rng.standard_normal((4, 5))
    psi = psi_batch(fmap, x, ContextDistribution.gaussian(m, np.full(5, 1e-8)))
    assert np.max(np.linalg.norm(psi - fmap.phi_batch(x, m), axis=1)) <= 1e-6


def test_psi_empirical_matches_weighted_sum():
    fmap = QuadraticFeatures(2)
    pts, w = np.array([[0.0, 1.0], [2.0, -1.0]]), np.array([0.3, 0.7])
    got = psi_expected(fmap, [1.0, 1.0], ContextDistribution.empirical(pts, w))
    want = 0.3 * fmap.phi([1.0, 1.0], pts[0]) + 0.7 * fmap.phi([1.0, 1.0], pts[1])
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-15)


# -- rewards and best action ---------------------------------------------------


def test_noiseless_reward_is_exact():
    env = Environment(np.array([[1.0], [2.0]]), QuadraticFeatures(1), [1.0, 1.0, -2.0], 0.0)
    mu = ContextDistribution.dirac([3.0])
    obs = sample_round(env, mu, np.random.default_rng(0))
    assert obs.reward(env, 0, 1) == 1.0  # (2 - 3)^2


def test_reward_noise_averages_out(env):
    sigma, n = env.noise_sigma, 100_000
    assert sigma == 1e-3
    mu = ContextDistribution.dirac(np.ones(5))
    rng = np.random.default_rng(7)
    mean = env.phi_set(np.ones(5))[0] @ env.theta_star
    rewards = mean + sigma * rng.standard_normal(n)
    obs = sample_round(env, mu, rng, [np.random.default_rng(1)])
    assert obs.noise.shape == (1,)
    assert abs(rewards.mean() - mean) <= 3 * sigma / np.sqrt(n)


def test_best_action_single_action():
    env = Environment(np.array([[0.5]]), QuadraticFeatures(1), [1.0, 1.0, -2.0], 0.0)
    assert best_action(env, ContextDistribution.gaussian([0.0], [1.0])) == 0


def test_best_action_dirac_matches_realized_argmax(env):
    c = np.random.default_rng(5).standard_normal(5)
    assert best_action(env, ContextDistribution.dirac(c)) == int(np.argmax(env.phi_set(c) @ env.theta_star))


def test_best_action_monte_carlo_oracle(env):
    rng = np.random.default_rng(12)
    mu = env.draw_distribution(rng)
    c = mu.sample(rng, 100_000)
    sq = ((env.actions[:, None, :] - c[None]) ** 2).sum(-1).mean(1)
    assert best_action(env, mu) == int(np.argmax(sq))  # raw reward is the squared distance


def test_best_action_ties_lowest_index():
    env = Environment(np.array([[1.0], [-1.0], [1.0]]), QuadraticFeatures(1), [1.0, 1.0, -2.0], 0.0)
    assert best_action(env, ContextDistribution.dirac([0.0])) == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_expected_regret_nonnegative(seed):
    env = make_synthetic_env(1, n_probes=200)
    mu = env.draw_distribution(np.random.default_rng(seed))
    vals = env.psi_set(mu) @ env.theta_star
    assert np.all(vals[best_action(env, mu)] - vals >= 0)


# -- environments --------------------------------------------------------------


def test_synthetic_shape(env):
    assert env.dim == 15 and env.n_actions == 20
    assert np.all(np.isfinite(env.actions))


def test_synthetic_deterministic():
    a = make_synthetic_env(42, n_probes=100)
    b = make_synthetic_env(42, n_probes=100)
    assert np.array_equal(a.actions, b.actions)
    assert np.array_equal(a.theta_star, b.theta_star)


def test_synthetic_parameter_direction(env):
    ratio = env.theta_star / synthetic_theta(5)
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-12)


def _probe_rewards(env, seed, n):
    rng = np.random.default_rng(seed)
    ctx = env.probe_contexts(rng, n)
    acts = rng.integers(env.n_actions, size=n)
    phi = env.features.phi_pairs(env.actions[acts], ctx)
    return phi @ env.theta_star, np.linalg.norm(phi, axis=1)


def test_synthetic_scaled_rewards_in_unit_interval():
    env = make_synthetic_env(8)
    r, norms = _probe_rewards(env, 0xCA11B + 1, 100_000)
    # Fresh probes can exceed the calibration sample's maximum by a hair.
    assert r.min() >= 0.0
    assert r.max() <= 1.0 + 0.05
    assert norms.max() <= 1.0 + 0.05


def test_calibration_probe_set_is_bounded_exactly():
    env = make_synthetic_env(3, n_probes=PROBES)
    rng = np.random.default_rng([3, 0xCA11B])  # replay the calibration probes
    ctx = env.probe_contexts(rng, PROBES)
    acts = rng.integers(env.n_actions, size=PROBES)
    phi = env.features.phi_pairs(env.actions[acts], ctx)
    r = phi @ env.theta_star
    assert r.min() >= 0.0 and r.max() == pytest.approx(1.0, rel=1e-12)
    assert np.linalg.norm(phi, axis=1).max() == pytest.approx(1.0, rel=1e-12)
    assert env.meta["raw_reward_min"] >= 0.0


def test_bilinear_dimension_and_exact_context():
    rng = np.random.default_rng(0)
    users, items = rng.standard_normal((10, 6)), rng.standard_normal((30, 6))
    env = make_bilinear_env(users, items, noise_level=0.0, n_probes=500)
    assert env.dim == 36 and env.exact_contexts
    mu = env.draw_distribution(np.random.default_rng(1))
    c = env.realize(mu, np.random.default_rng(2))
    assert np.array_equal(env.psi_set(mu), env.phi_set(c))


def test_bilinear_reward_is_scaled_rating():
    rng = np.random.default_rng(3)
    users, items = np.abs(rng.standard_normal((5, 3))), np.abs(rng.standard_normal((8, 3)))
    env = make_bilinear_env(users, items, noise_level=0.0, n_probes=500)
    a = env.reward_scale[0]
    got = env.phi_set(users[2]) @ env.theta_star
    np.testing.assert_allclose(got, a * items @ users[2], rtol=1e-12)


def test_bilinear_noisy_psi_differs():
    rng = np.random.default_rng(0)
    env = make_bilinear_env(rng.standard_normal((4, 2)), rng.standard_normal((6, 2)),
                            noise_level=0.5, n_probes=100)
    assert not env.exact_contexts
    mu = env.draw_distribution(np.random.default_rng(1))
    assert not np.allclose(env.psi_set(mu), env.phi_set(env.realize(mu, None)))


def test_bilinear_rank_mismatch():
    with pytest.raises(ContractError):
        make_bilinear_env(np.ones((3, 2)), np.ones((3, 4)))
