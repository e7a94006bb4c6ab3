import numpy as np
import pytest
from scipy import stats

from torusbfn.special import bessel_ratio_i1_i0, circular_distance, frac_to_angle, wrap
from torusbfn.torus_flow import (
    SenderDraw,
    TorusBelief,
    bayesian_update,
    closed_form_posterior,
    demonstrate_nonadditivity,
    draw_sender_sequence,
    flow_sample_fast,
    flow_sample_fast_batch,
    flow_sample_iterated,
    fold_draws,
    grid_total_variation,
    posterior_oracle,
    resultant_draws,
    torus_loss,
)
from torusbfn.von_mises import VonMises, circular_mean, kl_divergence


def update(m, c, y, alpha):
    return bayesian_update(TorusBelief(np.asarray(m), np.asarray(c)), SenderDraw(np.asarray(y), alpha))


class TestBayesianUpdate:
    def test_flat_prior_adopts_observation(self):
        post = update(2.5, 0.0, 0.7, 3.0)
        assert post.m == pytest.approx(0.7, abs=1e-15)
        assert post.c == pytest.approx(3.0, abs=1e-15)

    def test_agreement_is_additive(self):
        post = update(-1.2, 5.0, -1.2, 2.0)
        assert post.m == pytest.approx(-1.2, abs=1e-15)
        assert post.c == pytest.approx(7.0, abs=1e-14)

    def test_opposite_cancels(self):
        post = update(0.4, 4.0, wrap(0.4 + np.pi), 4.0)
        assert post.c == pytest.approx(0.0, abs=1e-14)

    def test_zero_resultant_is_canonical(self):
        # an exactly zero summed vector maps to (m=0, c=0) whatever m was
        zero = update(1.3, 0.0, 1.0, 0.0)
        assert float(zero.m) == 0.0 and float(zero.c) == 0.0

    def test_triangle_bounds(self, rng):
        m, y = rng.uniform(-np.pi, np.pi, (2, 10_000))
        c, a = rng.uniform(0, 500, (2, 10_000))
        post = update(m, c, y, a)
        slack = 1e-12 * (a + c)
        assert np.all(post.c >= np.abs(a - c) - slack)
        assert np.all(post.c <= a + c + slack)
        assert np.all((post.m >= -np.pi) & (post.m < np.pi))

    def test_matches_law_of_cosines(self, rng):
        m, y = rng.uniform(-np.pi, np.pi, (2, 1000))
        c, a = rng.uniform(0, 50, (2, 1000))
        post = update(m, c, y, a)
        direct = np.sqrt(np.maximum(a * a + c * c + 2 * a * c * np.cos(y - m), 0))
        np.testing.assert_allclose(post.c, direct, rtol=1e-9, atol=1e-6)

    def test_translation_equivariant(self, rng):
        for _ in range(100):
            t = rng.uniform(-20, 20)
            prev = TorusBelief(rng.uniform(-np.pi, np.pi, 3), rng.uniform(0, 100, 3))
            draw = SenderDraw(rng.uniform(-np.pi, np.pi, 3), rng.uniform(0.1, 100))
            lhs = bayesian_update(prev.shift(t), draw.shift(t))
            rhs = bayesian_update(prev, draw).shift(t)
            assert np.all(circular_distance(lhs.m, rhs.m) <= 1e-12)
            np.testing.assert_allclose(lhs.c, rhs.c, rtol=1e-12, atol=1e-12)


class TestConjugacy:
    def test_documented_example(self):
        grid, dens = posterior_oracle(0.0, 1.0, 1.0, 2.0, grid_size=10_000)
        assert grid_total_variation(grid, dens, closed_form_posterior(0.0, 1.0, 1.0, 2.0)) <= 1e-4

    def test_random_pairs(self, rng):
        for _ in range(100):
            m, y = rng.uniform(-np.pi, np.pi, 2)
            c, a = rng.uniform(0, 100, 2)
            grid, dens = posterior_oracle(m, c, y, a)
            assert grid_total_variation(grid, dens, closed_form_posterior(m, c, y, a)) <= 1e-4

    def test_flat_prior_gives_sender_density(self):
        grid, dens = posterior_oracle(1.0, 0.0, -0.5, 3.0)
        assert grid_total_variation(grid, dens, VonMises(-0.5, 3.0)) <= 1e-12

    def test_vanishing_accuracy_gives_prior(self):
        grid, dens = posterior_oracle(1.0, 6.0, -0.5, 1e-8)
        assert grid_total_variation(grid, dens, VonMises(1.0, 6.0)) <= 1e-8

    def test_grid_too_coarse(self):
        with pytest.raises(ValueError):
            posterior_oracle(0.0, 1.0, 0.0, 1.0, grid_size=100)


class TestFlowSamplers:
    def test_zero_steps_is_prior(self, rng):
        for sampler in (flow_sample_fast, flow_sample_iterated):
            b = sampler(np.zeros(5), [], rng)
            np.testing.assert_array_equal(b.c, 0.0)

    def test_single_step_concentration_is_alpha(self, rng):
        for sampler in (flow_sample_fast, flow_sample_iterated):
            b = sampler(np.full(1000, 0.4), [3.5], rng)
            np.testing.assert_allclose(b.c, 3.5, rtol=1e-15)

    def test_single_step_same_value_given_same_draw(self):
        x = np.linspace(-3, 3, 11)
        fast = flow_sample_fast(x, [2.0], np.random.default_rng(4))
        rng = np.random.default_rng(4)
        it = bayesian_update(TorusBelief.prior(x.shape), SenderDraw(draw_sender_sequence(x, [2.0], rng)[0], 2.0))
        np.testing.assert_allclose(fast.m, it.m, atol=1e-15)

    def test_shared_draws_agree(self, backend, vm_schedule_1000_100):
        alphas = vm_schedule_1000_100.alphas
        y = draw_sender_sequence(np.full(200, frac_to_angle(0.3)), alphas, np.random.default_rng(0))
        m_it, c_it = fold_draws(y, alphas)
        m_fa, c_fa = resultant_draws(y, alphas)
        assert np.max(circular_distance(m_it, m_fa)) <= 1e-10
        assert np.max(np.abs(c_it - c_fa)) <= 1e-10

    def test_fold_kernel_matches_update_loop(self, backend, rng):
        alphas = rng.uniform(0.1, 20, 30)
        y = rng.uniform(-np.pi, np.pi, (30, 7))
        ms, cs = fold_draws(y, alphas)
        b = TorusBelief.prior(7)
        for j, a in enumerate(alphas):
            b = bayesian_update(b, SenderDraw(y[j], a))
            np.testing.assert_allclose(ms[j + 1], b.m, atol=1e-13)
            np.testing.assert_allclose(cs[j + 1], b.c, rtol=1e-13)

    def test_iterated_mean_direction(self, vm_schedule_1000_100):
        x = frac_to_angle(0.3)
        b = flow_sample_iterated(np.full(1000, x), vm_schedule_1000_100.alphas, np.random.default_rng(2))
        m, _ = circular_mean(b.m)
        assert abs(m - x) <= 0.02

    def test_fast_and_iterated_indistinguishable(self, vm_schedule_1000_100):
        x = np.full(3000, frac_to_angle(0.3))
        alphas = vm_schedule_1000_100.alphas[:40]
        fast = flow_sample_fast(x, alphas, np.random.default_rng(10))
        it = flow_sample_iterated(x, alphas, np.random.default_rng(11))
        assert stats.ks_2samp(fast.m, it.m).pvalue > 1e-3
        assert stats.ks_2samp(fast.c, it.c).pvalue > 1e-3

    def test_extended_precision_path(self):
        alphas = np.full(20_000, 0.05)
        x = np.array([0.3, -2.0])
        y = draw_sender_sequence(x, alphas, np.random.default_rng(1))
        m_it, c_it = fold_draws(y, alphas)
        m_fa, c_fa = resultant_draws(y, alphas)
        assert resultant_draws(y[:10], alphas[:10])[1].dtype == np.float64
        assert np.max(np.abs(c_it[-1] - c_fa[-1])) <= 1e-9
        b = flow_sample_fast(x, alphas, np.random.default_rng(1))
        np.testing.assert_allclose(b.c, c_fa[-1], rtol=1e-12)

    def test_batch_prefixes(self, rng):
        alphas = np.array([1.0, 2.0, 3.0, 4.0])
        x = np.zeros((2000, 2))
        k = np.repeat([0, 1, 4], [500, 500, 1000])
        b = flow_sample_fast_batch(x, k, alphas, rng)
        np.testing.assert_array_equal(b.c[:500], 0.0)
        assert circular_mean(b.m[:500].ravel())[1] < 0.1  # prior m is uniform
        np.testing.assert_allclose(b.c[500:1000], 1.0)
        ref = flow_sample_fast(np.zeros((1000, 2)), alphas, np.random.default_rng(7))
        assert stats.ks_2samp(b.c[1000:].ravel(), ref.c.ravel()).pvalue > 1e-3

    def test_rejects_nonpositive_accuracy(self, rng):
        with pytest.raises(ValueError):
            flow_sample_fast(np.zeros(2), [1.0, 0.0], rng)

    def test_shift_equivariant_pathwise(self):
        alphas = np.array([0.5, 2.0, 8.0, 30.0])
        x = np.linspace(-3, 3, 9)
        a = flow_sample_fast(x, alphas, np.random.default_rng(8))
        b = flow_sample_fast(wrap(x + 1.1), alphas, np.random.default_rng(8))
        assert np.max(circular_distance(b.m, wrap(a.m + 1.1))) <= 1e-12
        np.testing.assert_allclose(b.c, a.c, rtol=1e-12)


class TestNonadditivity:
    def test_moderate_accuracies(self):
        rep = demonstrate_nonadditivity(0.0, 5.0, 5.0, 100_000, np.random.default_rng(0))
        assert rep["one_step_c"] == 10.0
        assert rep["two_step_var"] > 1e-3
        assert rep["two_step_mean"] < 10.0
        assert sum(rep["histogram"]["counts"]) == 100_000

    def test_large_accuracies_nearly_additive(self):
        rep = demonstrate_nonadditivity(1.0, 1e4, 1e4, 10_000, np.random.default_rng(1))
        assert abs(rep["two_step_mean"] / 2e4 - 1) <= 1e-3

    def test_zero_second_accuracy(self):
        rep = demonstrate_nonadditivity(-2.0, 3.0, 0.0, 10_000, np.random.default_rng(2))
        assert rep["two_step_min"] == pytest.approx(3.0, rel=1e-14)
        assert rep["two_step_max"] == pytest.approx(3.0, rel=1e-14)

    @pytest.mark.parametrize("kw", [{"alpha_a": 0.0}, {"alpha_b": -1.0}, {"trials": 10}])
    def test_rejects_bad_input(self, kw):
        args = {"x": 0.0, "alpha_a": 1.0, "alpha_b": 1.0, "trials": 10_000} | kw
        with pytest.raises(ValueError):
            demonstrate_nonadditivity(rng=np.random.default_rng(0), **args)


class TestTorusLoss:
    def test_equals_n_times_kl(self, rng):
        for _ in range(20):
            F, F_hat = rng.uniform(-np.pi, np.pi, (2, 3))
            alpha, n = rng.uniform(0.1, 500), 50
            kl = kl_divergence(VonMises(F, alpha), VonMises(F_hat, alpha)).sum()
            assert torus_loss(F, F_hat, alpha, n) == pytest.approx(n * kl, rel=1e-10)

    def test_zero_for_perfect_prediction(self):
        F = np.array([[0.1, -3.0], [2.0, 1.0]])
        np.testing.assert_array_equal(torus_loss(F, F, np.array([2.0, 3.0])[:, None], 10), 0.0)

    def test_per_row_accuracy(self):
        F = np.zeros((2, 1))
        F_hat = np.full((2, 1), np.pi / 2)
        alpha = np.array([1.0, 4.0])
        out = torus_loss(F, F_hat, alpha, 5)
        np.testing.assert_allclose(out, 5 * alpha * bessel_ratio_i1_i0(alpha))
