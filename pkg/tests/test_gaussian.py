import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import linalg, stats
from scipy.special import logsumexp

from gibbskit.errors import DimensionError, NumericalError, UnsupportedError
from gibbskit.gaussian import (
    GaussianLaw,
    GaussianMixture,
    amit_gap,
    block_update_law,
    conditional_of,
    conditional_variance_sum,
    entropy_gaussian,
    expected_conditional_kl,
    frame_update_law,
    gaussian_conditional,
    gs_one_step_law,
    kl_gaussian,
    marginal_drop_block,
    marginal_keep,
    potential_energy_gaussian,
    product_law,
    projected_law,
    random_law,
    slowest_linear_functional,
)
from gibbskit.targets import BlockStructure, GaussianTarget, condition_numbers_gaussian, random_precision


def _pair(seed, d):
    rng = np.random.default_rng(seed)
    return random_law(rng, d), random_law(rng, d, spread=2.0)


class TestKL:
    def test_one_dimensional_formula(self):
        # KL(N(m1, s1^2) | N(m2, s2^2)) = log(s2/s1) + (s1^2 + (m1-m2)^2)/(2 s2^2) - 1/2
        m1, s1, m2, s2 = 0.3, 0.7, -1.1, 1.9
        ref = math.log(s2 / s1) + (s1**2 + (m1 - m2) ** 2) / (2 * s2**2) - 0.5
        kl = kl_gaussian(GaussianLaw([m1], [[s1**2]]), GaussianLaw([m2], [[s2**2]]))
        assert kl == pytest.approx(ref, rel=1e-13)

    def test_monte_carlo_oracle(self, rng):
        mu, nu = random_law(rng, 3), random_law(rng, 3, spread=1.0)
        x = mu.sample(rng, 400_000)
        vals = stats.multivariate_normal(mu.mean, mu.covariance).logpdf(x) - \
            stats.multivariate_normal(nu.mean, nu.covariance).logpdf(x)
        se = vals.std() / math.sqrt(x.shape[0])
        assert abs(kl_gaussian(mu, nu) - vals.mean()) < 4 * se

    @given(st.integers(1, 8), st.integers(0, 10**6))
    def test_nonnegative_and_zero_on_diagonal(self, d, seed):
        mu, nu = _pair(seed, d)
        assert kl_gaussian(mu, nu) >= 0.0
        assert kl_gaussian(mu, mu) == pytest.approx(0.0, abs=1e-10)

    @given(st.integers(2, 6), st.integers(0, 10**6))
    def test_chain_rule(self, d, seed):
        mu, nu = _pair(seed, d)
        keep = [0]
        rest = list(range(1, d))
        total = kl_gaussian(marginal_keep(mu, rest), marginal_keep(nu, rest)) + \
            expected_conditional_kl(mu, nu, keep)
        assert total == pytest.approx(kl_gaussian(mu, nu), rel=1e-9, abs=1e-10)

    def test_tensorization_for_products(self):
        mu = product_law([0.0, 1.0, -2.0], [1.0, 0.5, 2.0])
        nu = product_law([1.0, 0.0, 0.0], [2.0, 1.0, 1.0])
        parts = [kl_gaussian(marginal_keep(mu, [i]), marginal_keep(nu, [i])) for i in range(3)]
        assert kl_gaussian(mu, nu) == pytest.approx(sum(parts), rel=1e-13)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            kl_gaussian(GaussianLaw([0.0], [[1.0]]), GaussianLaw([0.0, 0.0], np.eye(2)))


class TestEntropyAndPotential:
    def test_entropy_matches_scipy(self, rng):
        law = random_law(rng, 4)
        ref = stats.multivariate_normal(law.mean, law.covariance).entropy()
        assert entropy_gaussian(law) == pytest.approx(-ref, rel=1e-12)

    def test_potential_energy_monte_carlo(self, rng):
        t = GaussianTarget(rng.standard_normal(3), random_precision(rng, 3))
        mu = random_law(rng, 3)
        x = mu.sample(rng, 300_000)
        vals = -t.log_density(x)
        se = vals.std() / math.sqrt(x.shape[0])
        assert abs(potential_energy_gaussian(mu, t) - vals.mean()) < 4 * se

    @given(st.integers(1, 6), st.integers(0, 10**6))
    def test_kl_is_potential_plus_entropy(self, d, seed):
        rng = np.random.default_rng(seed)
        t = GaussianTarget(rng.standard_normal(d), random_precision(rng, d))
        mu = random_law(rng, d)
        lhs = potential_energy_gaussian(mu, t) + entropy_gaussian(mu)
        assert lhs == pytest.approx(kl_gaussian(mu, t.law()), rel=1e-8, abs=1e-9)


class TestConditionals:
    def test_precision_and_covariance_forms_agree(self, rng):
        Q = random_precision(rng, 5)
        m = rng.standard_normal(5)
        blocks = BlockStructure((2, 1, 2))
        law = GaussianLaw(m, np.linalg.inv(Q))
        z = rng.standard_normal(3)
        mean, prec = gaussian_conditional(Q, m, blocks, [0], z)
        c = conditional_of(law, [0, 1])
        np.testing.assert_allclose(mean, c.mean_at(z), rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(np.linalg.inv(prec), c.covariance, rtol=1e-9, atol=1e-12)

    def test_singular_block(self):
        Q = np.array([[0.0, 0.0], [0.0, 1.0]])
        with pytest.raises(NumericalError):
            gaussian_conditional(Q, np.zeros(2), (1, 1), [0], np.zeros(1))

    def test_block_update_law_monte_carlo(self, rng):
        Q = np.array([[2.0, 0.8, 0.1], [0.8, 1.5, -0.4], [0.1, -0.4, 1.0]])
        t = GaussianTarget([0.5, -0.5, 1.0], Q)
        mu = random_law(rng, 3)
        x = mu.sample(rng, 400_000)
        mean, prec = gaussian_conditional(Q, t.mean, t.blocks, [1], np.zeros(2))
        # conditional mean is affine in x_{-1}: x*_1 - (Q_10 r_0 + Q_12 r_2)/Q_11
        r = x - t.mean
        x[:, 1] = t.mean[1] - (Q[1, 0] * r[:, 0] + Q[1, 2] * r[:, 2]) / Q[1, 1] + \
            rng.standard_normal(x.shape[0]) / math.sqrt(Q[1, 1])
        law = block_update_law(mu, t, 1)
        np.testing.assert_allclose(x.mean(axis=0), law.mean, atol=0.01)
        np.testing.assert_allclose(np.cov(x.T), law.covariance, atol=0.02)

    def test_block_update_of_target_is_target(self, rng):
        t = GaussianTarget(rng.standard_normal(4), random_precision(rng, 4))
        law = block_update_law(t.law(), t, 2)
        np.testing.assert_allclose(law.covariance, t.covariance, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(law.mean, t.mean, atol=1e-12)

    def test_frame_update_with_axis_frame_is_block_update(self, rng):
        t = GaussianTarget(rng.standard_normal(3), random_precision(rng, 3))
        mu = random_law(rng, 3)
        a = frame_update_law(mu, t, np.eye(3)[:, [1]])
        b = block_update_law(mu, t, 1)
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)
        np.testing.assert_allclose(a.covariance, b.covariance, atol=1e-10)

    def test_full_frame_gives_target(self, rng):
        t = GaussianTarget(rng.standard_normal(3), random_precision(rng, 3))
        law = frame_update_law(random_law(rng, 3), t, np.linalg.qr(rng.standard_normal((3, 3)))[0])
        assert kl_gaussian(law, t.law()) == pytest.approx(0.0, abs=1e-10)

    def test_marginal_drop_block(self, rng):
        law = random_law(rng, 5)
        m = marginal_drop_block(law, 1, BlockStructure((2, 2, 1)))
        np.testing.assert_array_equal(m.mean, law.mean[[0, 1, 4]])


class TestMixture:
    def test_logpdf_matches_logsumexp(self, rng):
        comps = [random_law(rng, 2) for _ in range(3)]
        w = np.array([0.2, 0.5, 0.3])
        mix = GaussianMixture(w, comps)
        x = rng.standard_normal((7, 2))
        ref = logsumexp([np.log(wi) + c.logpdf(x) for wi, c in zip(w, comps)], axis=0)
        np.testing.assert_allclose(mix.logpdf(x), ref, rtol=1e-12)

    def test_moments(self, rng):
        comps = [random_law(rng, 2) for _ in range(2)]
        mix = GaussianMixture([0.4, 0.6], comps)
        x = mix.sample(rng, 400_000)
        np.testing.assert_allclose(x.mean(axis=0), mix.mean, atol=0.01)
        np.testing.assert_allclose(np.cov(x.T), mix.covariance, atol=0.03)

    def test_one_step_law_has_block_components(self, rng):
        t = GaussianTarget(rng.standard_normal(3), random_precision(rng, 3))
        mix = gs_one_step_law(random_law(rng, 3), t)
        assert len(mix.components) == 3
        np.testing.assert_allclose(mix.weights, 1.0 / 3)


class TestSpectral:
    @pytest.mark.parametrize("rho", [0.0, 0.3, 0.5, -0.8])
    def test_two_dimensional_gap(self, rho):
        Q = np.array([[1.0, rho], [rho, 1.0]])
        assert amit_gap(Q) == pytest.approx((1 - abs(rho)) / 2)

    def test_known_value(self):
        assert amit_gap([[1.0, 0.5], [0.5, 1.0]]) == pytest.approx(0.25)

    @given(st.integers(2, 10), st.integers(0, 10**6))
    def test_gap_is_inverse_d_kappa_star(self, d, seed):
        Q = random_precision(np.random.default_rng(seed), d)
        ks = condition_numbers_gaussian(Q).kappa_star
        assert amit_gap(Q) == pytest.approx(1.0 / (d * ks), rel=1e-10)

    def test_gap_is_scale_invariant(self, rng):
        Q = random_precision(rng, 4)
        s = np.exp(rng.standard_normal(4))
        assert amit_gap(s[:, None] * Q * s[None, :]) == pytest.approx(amit_gap(Q), rel=1e-10)

    def test_non_unit_blocks_unsupported(self):
        with pytest.raises(UnsupportedError):
            amit_gap(np.eye(3), (2, 1))

    def test_slowest_functional_is_eigenvector_of_gibbs_operator(self, rng):
        Q = random_precision(rng, 5)
        d = 5
        a = slowest_linear_functional(Q)
        P = np.eye(d) - Q @ np.diag(1.0 / np.diag(Q)) / d
        np.testing.assert_allclose(P @ a, (1 - amit_gap(Q)) * a, atol=1e-10)

    def test_conditional_variance_sum_against_conditionals(self, rng):
        Q = random_precision(rng, 4)
        v = rng.standard_normal(4)
        law = GaussianLaw(np.zeros(4), np.linalg.inv(Q))
        ref = sum(v[m] ** 2 * conditional_of(law, [m]).covariance[0, 0] for m in range(4))
        total, var = conditional_variance_sum(Q, v)
        assert total == pytest.approx(ref, rel=1e-9)
        assert var == pytest.approx(v @ law.covariance @ v, rel=1e-9)

    def test_projection(self, rng):
        law = random_law(rng, 3)
        V = np.linalg.qr(rng.standard_normal((3, 2)))[0]
        p = projected_law(law, V)
        np.testing.assert_allclose(p.covariance, V.T @ law.covariance @ V)
        with pytest.raises(DimensionError):
            projected_law(law, np.eye(2))
