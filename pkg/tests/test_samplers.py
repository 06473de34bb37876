import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from gibbskit.errors import ConfigError, DimensionError, InputError, NumericalError, UnsupportedError
from gibbskit.samplers import (
    ChainState,
    MwGConfig,
    StiefelFrame,
    _composite_conditional_draw,
    chain_csv_string,
    choose_block,
    choose_subset,
    conditional_mode,
    gs_ell_step,
    gs_step,
    hr_ell_step,
    make_step,
    mh_accept,
    mwg_step,
    run_chain,
    sample_stiefel_frame,
)
from gibbskit.targets import GaussianTarget, RidgeTarget, logcosh_target_1d, random_precision


@pytest.fixture
def g3():
    Q = np.array([[2.0, 0.7, -0.3], [0.7, 1.5, 0.4], [-0.3, 0.4, 1.0]])
    return GaussianTarget([1.0, -0.5, 0.25], Q)


def one_step_from_target(target, step, rng, n=20_000):
    x0 = target.sample(rng, n)
    out = np.empty_like(x0)
    for i in range(n):
        out[i] = step(ChainState(x0[i]), rng).x
    return out


def assert_moments(x, target, z=5.0):
    n = x.shape[0]
    cov = target.covariance
    se_mean = np.sqrt(np.diag(cov) / n)
    assert np.all(np.abs(x.mean(axis=0) - target.mean) < z * se_mean)
    se_cov = np.sqrt((cov**2 + np.outer(np.diag(cov), np.diag(cov))) / n)
    assert np.all(np.abs(np.cov(x.T) - cov) < z * se_cov)


class TestIndexing:
    def test_block_choice_is_uniform(self, rng):
        counts = np.bincount([choose_block(rng, 5) for _ in range(50_000)], minlength=5)
        assert stats.chisquare(counts).pvalue > 1e-3

    def test_block_choice_edge(self):
        class One:
            def random(self):
                return 1.0 - 1e-17
        assert choose_block(One(), 4) == 3

    @given(st.integers(1, 12), st.data())
    def test_subsets_sorted_distinct(self, M, data):
        ell = data.draw(st.integers(1, M))
        S = choose_subset(np.random.default_rng(M * 100 + ell), M, ell)
        assert S == sorted(set(S)) and len(S) == ell and 0 <= S[0] and S[-1] < M


class TestFrames:
    def test_orthonormal(self, rng):
        F = sample_stiefel_frame(6, 3, rng)
        np.testing.assert_allclose(F.columns.T @ F.columns, np.eye(3), atol=1e-12)

    @pytest.mark.parametrize("ell", [1, 2])
    def test_haar_second_moment(self, rng, ell):
        d, n = 4, 20_000
        acc = np.zeros((d, d))
        for _ in range(n):
            V = sample_stiefel_frame(d, ell, rng).columns
            acc += V @ V.T
        np.testing.assert_allclose(acc / n, ell / d * np.eye(d), atol=0.015)

    def test_direction_uniform_on_sphere(self, rng):
        v = np.array([sample_stiefel_frame(3, 1, rng).columns[:, 0] for _ in range(20_000)])
        # each coordinate of a uniform point on S^2 is uniform on [-1, 1]
        assert stats.kstest(v[:, 0], stats.uniform(-1, 2).cdf).pvalue > 1e-3

    def test_rejects_bad_frames(self):
        with pytest.raises(ConfigError):
            StiefelFrame(np.array([[1.0, 1.0], [0.0, 1.0]]))
        with pytest.raises(DimensionError):
            StiefelFrame(np.eye(3)[:2])
        with pytest.raises(ConfigError):
            sample_stiefel_frame(3, 4, np.random.default_rng(0))


class TestStationarity:
    def test_gs(self, rng, g3):
        assert_moments(one_step_from_target(g3, lambda s, r: gs_step(g3, s, r), rng), g3)

    def test_gs_ell(self, rng, g3):
        x = one_step_from_target(g3, lambda s, r: gs_ell_step(g3, s, 2, r), rng)
        assert_moments(x, g3)

    @pytest.mark.parametrize("ell", [1, 2])
    def test_hr(self, rng, g3, ell):
        x = one_step_from_target(g3, lambda s, r: hr_ell_step(g3, s, ell, r), rng)
        assert_moments(x, g3)

    @pytest.mark.parametrize("kernel", ["mwg-rwm", "mwg-imh"])
    def test_mwg(self, rng, g3, kernel):
        x = one_step_from_target(g3, make_step(kernel, g3), rng)
        assert_moments(x, g3)

    def test_full_subset_is_exact(self, rng, g3):
        state = ChainState(np.array([5.0, -5.0, 5.0]))
        x = np.array([gs_ell_step(g3, state, 3, rng).x for _ in range(20_000)])
        assert_moments(x, g3)

    def test_full_frame_is_exact(self, rng, g3):
        state = ChainState(np.array([5.0, -5.0, 5.0]))
        x = np.array([hr_ell_step(g3, state, 3, rng).x for _ in range(20_000)])
        assert_moments(x, g3)


class TestCompositeConditionals:
    def test_ridge_conditional_against_quadrature(self, rng):
        t = RidgeTarget([[1.0, 0.5], [-0.3, 1.2], [0.8, -0.9]], "logistic",
                        prior_precision=0.7, labels=[1, 0, 1])
        x = np.array([0.4, -0.2])
        f = t.conditional_potential(x, 0)
        z, _ = integrate.quad(lambda s: math.exp(-f(s)), -np.inf, np.inf)

        def cdf(s):
            return integrate.quad(lambda u: math.exp(-f(u)), -np.inf, s)[0] / z

        draws = np.array([_composite_conditional_draw(t, x, 0, rng) for _ in range(3000)])
        assert stats.kstest(draws, np.vectorize(cdf)).pvalue > 1e-3

    def test_logcosh_gibbs_is_exact_draw(self, rng):
        # one block: every step is an independent draw from pi(x) = 1/(pi cosh x)
        t = logcosh_target_1d()
        rec = run_chain(t, "gs", [3.0], 5000, rng)
        cdf = lambda s: 2.0 / math.pi * np.arctan(np.exp(s))
        assert stats.kstest(rec.states[:, 0], cdf).pvalue > 1e-3

    def test_hr_on_ridge(self, rng):
        t = RidgeTarget(np.eye(2), "logcosh", prior_precision=1.0)
        rec = run_chain(t, "hr", [0.0, 0.0], 200, rng)
        assert np.all(np.isfinite(rec.states))
        with pytest.raises(UnsupportedError):
            hr_ell_step(t, ChainState(np.zeros(2)), 2, rng)

    def test_conditional_mode_ridge(self):
        t = RidgeTarget([[1.0, 2.0], [0.5, -1.0]], "logistic", prior_precision=1.0, labels=[1, 0])
        x = np.array([0.3, -0.4])
        m = conditional_mode(t, x, 1)[0]
        assert t.conditional_derivative(x, 1)(m) == pytest.approx(0.0, abs=1e-8)


class TestMetropolis:
    def test_zero_log_ratio_accepts(self, rng):
        assert all(mh_accept(0.0, 0.0, rng) for _ in range(1000))

    def test_acceptance_rate(self, rng):
        rate = np.mean([mh_accept(math.log(0.3), 0.0, rng) for _ in range(50_000)])
        assert rate == pytest.approx(0.3, abs=0.01)

    def test_consumes_one_uniform(self):
        a, b = np.random.default_rng(1), np.random.default_rng(1)
        mh_accept(-math.inf, 0.0, a)
        b.random()
        assert a.random() == b.random()
        assert not mh_accept(-math.inf, 0.0, a)

    def test_nan_raises(self, rng):
        with pytest.raises(NumericalError):
            mh_accept(math.nan, 0.0, rng)

    def test_imh_on_gaussian_always_accepts(self, rng, g3):
        rec = run_chain(g3, "mwg-imh", g3.mean, 500, rng)
        assert all(rec.accepted)

    def test_exact_config_is_gibbs(self, g3):
        cfg = MwGConfig("exact")
        a = mwg_step(g3, g3.condition_numbers, cfg, ChainState(g3.mean), np.random.default_rng(3))
        b = gs_step(g3, ChainState(g3.mean), np.random.default_rng(3))
        np.testing.assert_array_equal(a.x, b.x)

    def test_default_scales(self, g3):
        cn = g3.condition_numbers
        cfg = MwGConfig.default("rwm", cn, g3.blocks)
        np.testing.assert_allclose(cfg.step_scales, 1.0 / np.asarray(cn.block_L))

    def test_bad_config(self, g3):
        with pytest.raises(ConfigError):
            MwGConfig("hmc")
        with pytest.raises(ConfigError):
            MwGConfig("rwm", (1.0, -1.0))
        with pytest.raises(ConfigError):
            mwg_step(g3, g3.condition_numbers, MwGConfig("rwm", (1.0,)), ChainState(g3.mean),
                     np.random.default_rng(0))


class TestChains:
    def test_deterministic(self, g3):
        a = run_chain(g3, "gs", g3.mean, 100, np.random.default_rng(9))
        b = run_chain(g3, "gs", g3.mean, 100, np.random.default_rng(9))
        np.testing.assert_array_equal(a.states, b.states)

    def test_gs_changes_one_coordinate(self, rng, g3):
        rec = run_chain(g3, "gs", g3.mean, 50, rng)
        changed = np.sum(np.diff(rec.states, axis=0) != 0, axis=1)
        assert np.all(changed <= 1)
        for row, prev, mv in zip(rec.states[1:], rec.states[:-1], rec.moves[1:]):
            moved = np.flatnonzero(row != prev)
            assert moved.size == 0 or moved[0] + 1 == int(mv)

    def test_csv_layout(self, rng, g3):
        text = chain_csv_string(run_chain(g3, "gs", g3.mean, 5, rng))
        rows = list(csv.reader(io.StringIO(text)))
        assert rows[0] == ["step", "block_or_frame_id", "x_1", "x_2", "x_3", "accepted"]
        assert len(rows) == 6 and rows[1][0] == "1" and rows[1][-1] == ""
        mh = chain_csv_string(run_chain(g3, "mwg-rwm", g3.mean, 3, rng))
        assert all(r[-1] in ("0", "1") for r in list(csv.reader(io.StringIO(mh)))[1:])

    def test_state_validation(self, g3, rng):
        with pytest.raises(DimensionError):
            gs_step(g3, ChainState(np.zeros(2)), rng)
        with pytest.raises(InputError):
            ChainState([0.0, np.inf])
        with pytest.raises(ConfigError):
            run_chain(g3, "gs", g3.mean, 0, rng)
        with pytest.raises(ConfigError):
            make_step("nuts", g3)
        with pytest.raises(ConfigError):
            gs_ell_step(g3, ChainState(g3.mean), 4, rng)

    def test_subsets_need_gaussian(self, rng):
        t = RidgeTarget(np.eye(2), "logcosh", prior_precision=1.0)
        with pytest.raises(UnsupportedError):
            gs_ell_step(t, ChainState(np.zeros(2)), 2, rng)

    def test_state_is_immutable(self, g3, rng):
        s = gs_step(g3, ChainState(g3.mean), rng)
        with pytest.raises(ValueError):
            s.x[0] = 1.0
