import math

import numpy as np
import pytest

from stochls import make_builtin, make_gaussian_probe
from stochls.sampling import (
    AccuracyConfig,
    estimate_function_pair,
    estimate_gradient,
    function_sample_size,
    gradient_sample_size,
)


class TestGradientSampleSize:
    def test_closed_form(self):
        # V_g/((1-p_g) kappa^2 a^2 g^2) = 1/((1/17)*4) = 4.25 -> 5
        assert gradient_sample_size(1.0, 2.0, 16.0 / 17.0, 1.0, 1.0, 10**6) == 5

    def test_p_to_one_hits_cap(self):
        assert gradient_sample_size(1.0, 2.0, 1.0 - 1e-18, 1.0, 1.0, 1000) == 1000
        assert gradient_sample_size(1.0, 2.0, 1.0, 1.0, 1.0, 1000) == 1000

    def test_alpha_scaling(self):
        base = gradient_sample_size(1.0, 2.0, 0.9, 0.5, 1.0, 10**9)
        half = gradient_sample_size(1.0, 2.0, 0.9, 0.25, 1.0, 10**9)
        assert half == 4 * base or abs(half - 4 * base) <= 3  # ceil slack

    def test_zero_variance(self):
        assert gradient_sample_size(0.0, 2.0, 0.9, 1.0, 1.0, 100) == 1

    def test_zero_gradient_hits_cap(self):
        assert gradient_sample_size(1.0, 2.0, 0.9, 1.0, 0.0, 777) == 777

    def test_monotonicity_grid(self):
        # nondecreasing in p_g; nonincreasing in alpha, g_norm, kappa_g
        rng = np.random.default_rng(42)
        cap = 10**12
        for _ in range(100):
            v = rng.uniform(0.1, 5.0)
            k = rng.uniform(0.5, 4.0)
            p = rng.uniform(0.55, 0.99)
            a = rng.uniform(0.01, 1.0)
            g = rng.uniform(0.01, 2.0)
            base = gradient_sample_size(v, k, p, a, g, cap)
            assert gradient_sample_size(v, k, min(p * 1.01, 0.999), a, g, cap) >= base
            assert gradient_sample_size(v, k, p, a * 1.5, g, cap) <= base
            assert gradient_sample_size(v, k, p, a, g * 1.5, cap) <= base
            assert gradient_sample_size(v, k * 1.5, p, a, g, cap) <= base


class TestFunctionSampleSize:
    def cfg(self, **kw):
        defaults = dict(kappa_g=2.0, kappa_f=0.125, p_g=0.9, p_f=0.8, theta=0.5, max_batch=10**9)
        defaults.update(kw)
        return AccuracyConfig(**defaults)

    def test_zero_variance(self):
        assert function_sample_size(0.0, self.cfg(), 1.0, 1.0, 1.0, 100) == 1

    def test_delta_branch(self):
        # V_f/(theta^2 delta^4) = 1/(1/4) = 4 when the accuracy branch is smaller
        cfg = self.cfg(kappa_f=10.0, p_f=0.51)
        assert function_sample_size(1.0, cfg, 10.0, 10.0, 1.0, 10**6) == 4

    def test_delta_scaling(self):
        cfg = self.cfg(kappa_f=10.0, p_f=0.51)
        n1 = function_sample_size(1.0, cfg, 10.0, 10.0, 1.0, 10**9)
        n2 = function_sample_size(1.0, cfg, 10.0, 10.0, 0.5, 10**9)
        assert n2 == 16 * n1

    def test_zero_gradient_keeps_delta_branch(self):
        cfg = self.cfg()
        assert function_sample_size(1.0, cfg, 1.0, 0.0, 1.0, 10**6) == 4

    def test_accuracy_branch(self):
        cfg = self.cfg(p_f=0.9)
        # accuracy branch: 1/(0.1 * 0.125^2 * 1 * 1) = 640 > delta branch 4
        assert function_sample_size(1.0, cfg, 1.0, 1.0, 1.0, 10**6) == 640


class TestEstimateGradient:
    def test_deterministic_oracle_single_sample(self):
        p = make_builtin("quadratic_sc", 3, 12, seed=0, noise_scale=0.0)
        x = p.default_start()
        cfg = AccuracyConfig(max_batch=12)
        est = estimate_gradient(p, x, 1.0, cfg, np.random.default_rng(0))
        assert est.batch_size == 1
        assert est.guess_iterations == 1
        np.testing.assert_allclose(est.g, p.exact_gradient(x), rtol=1e-15)

    def test_tiny_alpha_caps(self):
        p = make_builtin("quadratic_sc", 3, 12, seed=0)
        cfg = AccuracyConfig(max_batch=12)
        est = estimate_gradient(p, p.default_start(), 1e-6, cfg, np.random.default_rng(0))
        assert est.batch_size == 12
        assert est.capped

    def test_radius_recomputable(self):
        p = make_builtin("quadratic_sc", 3, 50, seed=1)
        cfg = AccuracyConfig(max_batch=50)
        est = estimate_gradient(p, p.default_start(), 0.5, cfg, np.random.default_rng(3))
        assert est.accuracy_radius == pytest.approx(cfg.kappa_g * 0.5 * est.norm, rel=1e-15)

    def test_growth_reuses_draws(self):
        # a bad warm start forces extra rounds; the final batch contains the
        # initial draws as a prefix
        p = make_gaussian_probe(3, 10**6, v_grad=4.0, v_fun=1.0, seed=2)
        cfg = AccuracyConfig(max_batch=10**6, p_g=16 / 17)
        est = estimate_gradient(p, p.default_start(), 0.1, cfg,
                                np.random.default_rng(5), g_norm_guess=100.0)
        assert est.guess_iterations > 1
        assert not est.capped

    def test_event_frequency_small(self):
        # reduced version of the accuracy-event check (the acceptance suite
        # runs the full 20,000-trial version)
        p = make_gaussian_probe(4, 10**5, v_grad=1.0, v_fun=1.0, seed=11)
        cfg = AccuracyConfig(max_batch=10**7, p_g=16 / 17)
        x = p.default_start()
        grad = p.exact_gradient(x)
        rng = np.random.default_rng(17)
        hits = 0
        trials = 1500
        for _ in range(trials):
            est = estimate_gradient(p, x, 1.0, cfg, rng)
            hits += np.linalg.norm(est.g - grad) <= cfg.kappa_g * 1.0 * est.norm
        assert hits / trials >= 16 / 17 - 0.02


class TestEstimateFunctionPair:
    def test_deterministic_exact(self):
        p = make_builtin("quadratic_sc", 3, 12, seed=0, noise_scale=0.0)
        x = p.default_start()
        x_trial = x - 0.1 * p.exact_gradient(x)
        cfg = AccuracyConfig(max_batch=12)
        est_g = estimate_gradient(p, x, 1.0, cfg, np.random.default_rng(0))
        pair = estimate_function_pair(
            p, x, x_trial, 1.0, est_g, 1.0, cfg,
            np.random.default_rng(1), np.random.default_rng(2),
        )
        assert pair.f0 == p.exact_value(x)
        assert pair.fs == p.exact_value(x_trial)
        assert pair.batch_size_0 == 1 and pair.batch_size_s == 1

    def test_full_batch_matches_exact_to_mean_accuracy(self):
        p = make_builtin("quadratic_sc", 3, 8, seed=4, noise_scale=0.5)
        x = p.default_start()
        cfg = AccuracyConfig(max_batch=8)
        est_g = estimate_gradient(p, x, 1e-5, cfg, np.random.default_rng(0))
        assert est_g.batch_size == 8  # capped at the full count

    def test_zero_displacement_unbiased(self):
        # x_trial = x: the two independent batch means have equal expectation;
        # CLT bound on the averaged difference over many repeats
        p = make_gaussian_probe(3, 10**4, v_grad=0.5, v_fun=1.0, seed=6)
        x = p.default_start()
        cfg = AccuracyConfig(max_batch=10**6, p_f=0.8)
        rng0 = np.random.default_rng(100)
        rngs = np.random.default_rng(101)
        diffs = []
        for _ in range(400):
            est_g = estimate_gradient(p, x, 1.0, cfg, np.random.default_rng(7))
            pair = estimate_function_pair(p, x, x, 1.0, est_g, 1.0, cfg, rng0, rngs)
            diffs.append(pair.f0 - pair.fs)
        n = pair.batch_size_0
        bound = 4.0 * math.sqrt(2.0 * 1.0 / (n * len(diffs)))
        assert abs(np.mean(diffs)) <= bound

    def test_batches_independent(self):
        # same-point estimates from the two streams differ (separate batches)
        p = make_gaussian_probe(3, 10**4, v_grad=0.5, v_fun=1.0, seed=6)
        x = p.default_start()
        cfg = AccuracyConfig(max_batch=10**6, p_f=0.8)
        est_g = estimate_gradient(p, x, 1.0, cfg, np.random.default_rng(7))
        pair = estimate_function_pair(
            p, x, x, 1.0, est_g, 1.0, cfg,
            np.random.default_rng(8), np.random.default_rng(9),
        )
        assert pair.f0 != pair.fs


class TestConfig:
    def test_probability_ranges(self):
        with pytest.raises(ValueError):
            AccuracyConfig(p_g=0.5)
        with pytest.raises(ValueError):
            AccuracyConfig(p_f=1.2)

    def test_kappa_f_limit_check(self):
        cfg = AccuracyConfig(kappa_f=0.2)
        with pytest.raises(ValueError):
            cfg.check_against(alpha_max=1.0)
        cfg.check_against(alpha_max=0.5)  # 0.2 <= 0.5/(4*0.5)

    def test_zero_variance_collapse(self):
        # V_g = V_f = 0 means every size is 1 and estimates are exact
        p = make_builtin("nonconvex_sum", 3, 10, seed=1, noise_scale=0.0)
        cfg = AccuracyConfig(max_batch=10)
        x = p.default_start()
        est = estimate_gradient(p, x, 0.3, cfg, np.random.default_rng(0))
        assert est.batch_size == 1
        np.testing.assert_allclose(est.g, p.exact_gradient(x), rtol=1e-15)
        pair = estimate_function_pair(
            p, x, x - 0.3 * est.g, 0.3, est, 1.0, cfg,
            np.random.default_rng(1), np.random.default_rng(2),
        )
        assert pair.batch_size_0 == 1
        assert pair.f0 == p.exact_value(x)
