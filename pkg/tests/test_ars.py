import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, optimize, stats

from gibbskit.ars import (
    Envelope,
    ars_sample,
    conditional_mode_1d,
    envelope_refine,
    find_mode,
    initial_envelope,
)
from gibbskit.errors import BracketError, ConditionalSamplingError, HullViolationError, ModeError


def normal_logpdf(x):
    return -0.5 * x * x


def gamma_logpdf(k):
    def h(x):
        return (k - 1) * math.log(x) - x if x > 0 else -math.inf
    return h


def bimodal_logpdf(x):
    return float(np.logaddexp(-0.5 * (x - 3) ** 2, -0.5 * (x + 3) ** 2))


class TestDraws:
    def test_standard_normal_ks(self, rng):
        x, _ = ars_sample(normal_logpdf, (-1.0, 2.0), rng, size=20_000)
        assert stats.kstest(x, "norm").pvalue > 1e-3

    @pytest.mark.parametrize("k", [1.5, 3.0, 10.0])
    def test_gamma_ks(self, rng, k):
        x, _ = ars_sample(gamma_logpdf(k), (0.2, 4.0), rng, size=20_000)
        assert np.all(x > 0)
        assert stats.kstest(x, "gamma", args=(k,)).pvalue > 1e-3

    def test_truncated_support_ks(self, rng):
        h = lambda x: -0.5 * x * x if x > -0.5 else -math.inf
        x, _ = ars_sample(h, (-0.4, 2.0), rng, size=10_000, scale=1.0)
        ref = stats.truncnorm(-0.5, np.inf)
        assert np.all(x > -0.5)
        assert stats.kstest(x, ref.cdf).pvalue > 1e-3

    def test_evaluations_grow_sublinearly(self, rng):
        _, n_small = ars_sample(normal_logpdf, (-1.0, 1.0), rng, size=100)
        _, n_large = ars_sample(normal_logpdf, (-1.0, 1.0), rng, size=10_000)
        assert n_large < 10 * n_small

    def test_deterministic_given_seed(self):
        a, _ = ars_sample(normal_logpdf, (-1.0, 1.0), np.random.default_rng(5), size=50)
        b, _ = ars_sample(normal_logpdf, (-1.0, 1.0), np.random.default_rng(5), size=50)
        np.testing.assert_array_equal(a, b)

    def test_scalar_return(self, rng):
        x, n = ars_sample(normal_logpdf, (-1.0, 1.0), rng)
        assert isinstance(x, float) and n > 0


class TestEnvelope:
    @given(
        st.lists(st.floats(-5, 5, allow_nan=False), min_size=3, max_size=12, unique=True),
        st.floats(0.1, 5.0),
        st.floats(-2.0, 2.0),
    )
    def test_hull_above_density_above_squeeze(self, pts, a, b):
        pts = sorted(pts + [-20.0, 20.0])
        if min(np.diff(pts)) < 1e-3:
            return
        h = lambda x: -a * x * x + b * x - math.sqrt(1 + x * x)
        env = Envelope(pts, [h(p) for p in pts])
        for x in np.linspace(-8, 8, 161):
            hx = h(x)
            assert env.hull(x) >= hx - 1e-9 * max(1.0, abs(hx))
            assert env.squeeze(x) <= hx + 1e-9 * max(1.0, abs(hx))

    def test_hull_mass_matches_quadrature(self):
        pts = [-2.0, -0.5, 0.3, 1.7]
        env = Envelope(pts, [normal_logpdf(p) for p in pts])
        z = sum(
            integrate.quad(lambda x: math.exp(env.hull(x)), lo, hi)[0]
            for lo, hi in [(-np.inf, -2.0), (-2.0, -0.5), (-0.5, 0.3), (0.3, 1.7), (1.7, np.inf)]
        )
        assert env.log_mass == pytest.approx(math.log(z), rel=1e-7)

    def test_refinement_tightens(self):
        pts = [-2.0, 0.0, 2.0]
        env = Envelope(pts, [normal_logpdf(p) for p in pts])
        finer = envelope_refine(env, 1.0, normal_logpdf(1.0))
        assert len(finer) == 4
        for x in np.linspace(-4, 4, 81):
            assert finer.hull(x) <= env.hull(x) + 1e-12
            assert finer.squeeze(x) >= env.squeeze(x) - 1e-12

    def test_refine_ignores_duplicates_and_infinities(self):
        pts = [-1.0, 0.0, 1.0]
        env = Envelope(pts, [normal_logpdf(p) for p in pts])
        assert envelope_refine(env, 0.0, 0.0) is env
        assert envelope_refine(env, 5.0, -math.inf) is env

    def test_rejects_bad_abscissae(self):
        with pytest.raises(ValueError):
            Envelope([0.0, 1.0], [0.0, 0.0])
        with pytest.raises(ValueError):
            Envelope([0.0, 0.0, 1.0], [0.0, 0.0, 0.0])

    def test_initial_envelope_brackets_mode(self):
        env = initial_envelope(normal_logpdf, 0.0, 1.0)
        assert env.abscissae[0] < 0.0 < env.abscissae[-1]


class TestFailures:
    def test_hull_violation_detected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(HullViolationError):
            ars_sample(bimodal_logpdf, (-1.0, 1.0), rng, size=2000, mode=0.0, scale=1.0)

    def test_unbracketable_mode(self):
        with pytest.raises(BracketError):
            find_mode(lambda x: x, -1.0, 1.0)
        with pytest.raises(BracketError):
            find_mode(normal_logpdf, 1.0, -1.0)

    def test_nan_density(self, rng):
        with pytest.raises(ConditionalSamplingError):
            ars_sample(lambda x: math.nan, (-1.0, 1.0), rng)

    def test_find_mode_against_brent(self):
        h = lambda x: 2.0 * x - math.exp(x) - 0.1 * x * x
        ref = optimize.minimize_scalar(lambda x: -h(x)).x
        assert find_mode(h, -5.0, -4.0) == pytest.approx(ref, abs=1e-6)


class TestConditionalMode:
    @pytest.mark.parametrize("use_newton", [False, True])
    def test_root_of_increasing_derivative(self, use_newton):
        g = lambda x: x - 3.0 + math.tanh(x)
        g2 = (lambda x: 1.0 + 1.0 / math.cosh(x) ** 2) if use_newton else None
        ref = optimize.brentq(g, -10, 10, xtol=1e-14)
        assert conditional_mode_1d(g, 0.0, 1.0, g2) == pytest.approx(ref, abs=1e-9)

    def test_far_start(self):
        g = lambda x: x - 100.0
        assert conditional_mode_1d(g, 0.0, 0.5) == pytest.approx(100.0, abs=1e-9)

    def test_no_root(self):
        with pytest.raises(ModeError):
            conditional_mode_1d(lambda x: -1.0, 0.0, 1.0)
        with pytest.raises(ModeError):
            conditional_mode_1d(lambda x: math.nan, 0.0, 1.0)
