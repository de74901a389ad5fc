import math

import numpy as np
import pytest

from hgtf.errors import DomainError
from hgtf.rff import (
    RffModel,
    approx_kernel,
    expected_log_lik,
    feature_map,
    feature_matrix,
    kl_weights,
    log_prior_frequencies,
    predict,
    predict_batch,
    rbf_kernel,
)


def make_model(m=3, d=2, tau=1.0, sigma2=1.0, seed=0, chol_scale=0.3):
    rng = np.random.default_rng(seed)
    freqs = rng.normal(0.0, math.sqrt(tau), size=(m, d))
    chol = np.tril(rng.standard_normal((2 * m, 2 * m))) * chol_scale
    np.fill_diagonal(chol, np.abs(np.diagonal(chol)) + 0.1)
    return RffModel(
        frequencies=freqs,
        log_tau=math.log(tau),
        log_sigma2=math.log(sigma2),
        weight_mean=rng.standard_normal(2 * m) * 0.5,
        weight_chol=chol,
    )


class TestFeatureMap:
    def test_zero_input(self):
        model = make_model(m=4)
        phi = feature_map(np.zeros(2), model)
        np.testing.assert_allclose(phi, np.tile([1.0, 0.0], 4))
        assert phi @ phi == pytest.approx(4.0)

    def test_trig_identity(self):
        model = make_model(m=5, d=3)
        phi = feature_map(np.random.default_rng(1).standard_normal(3), model)
        pairs = phi.reshape(5, 2)
        np.testing.assert_allclose((pairs**2).sum(axis=1), np.ones(5), atol=1e-12)

    def test_self_kernel_is_one(self):
        model = make_model(m=7, d=4)
        x = np.random.default_rng(2).standard_normal(4)
        assert approx_kernel(x, x, model) == pytest.approx(1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            feature_map(np.zeros(5), make_model(d=2))

    def test_interleaved_layout(self):
        model = make_model(m=2, d=1)
        x = np.array([0.7])
        angles = (model.frequencies @ x).ravel()
        expected = np.array([np.cos(angles[0]), np.sin(angles[0]), np.cos(angles[1]), np.sin(angles[1])])
        np.testing.assert_allclose(feature_map(x, model), expected)


class TestApproxKernel:
    def test_monte_carlo_error_bound(self):
        m, tau, d = 2000, 1.0, 6
        model = make_model(m=m, d=d, tau=tau, seed=5)
        rng = np.random.default_rng(6)
        errs = []
        for _ in range(1000):
            x1, x2 = rng.standard_normal(d), rng.standard_normal(d)
            errs.append(abs(approx_kernel(x1, x2, model) - rbf_kernel(x1, x2, tau)))
        assert np.mean(errs) <= 3.0 / math.sqrt(m)

    def test_tau_zero_limit(self):
        model = make_model(m=4, d=3)
        model.frequencies = np.zeros_like(model.frequencies)
        rng = np.random.default_rng(7)
        assert approx_kernel(rng.standard_normal(3), rng.standard_normal(3), model) == pytest.approx(1.0)

    def test_error_shrinks_like_inverse_sqrt_m(self):
        rng = np.random.default_rng(8)
        d, tau = 6, 1.0
        pairs = [(rng.standard_normal(d), rng.standard_normal(d)) for _ in range(400)]
        means = {}
        for m in (100, 400, 1600):
            model = make_model(m=m, d=d, tau=tau, seed=100 + m)
            means[m] = np.mean(
                [abs(approx_kernel(a, b, model) - rbf_kernel(a, b, tau)) for a, b in pairs]
            )
        for m1, m2 in ((100, 400), (400, 1600)):
            ratio = means[m1] / means[m2]
            ideal = math.sqrt(m2 / m1)  # 2x per 4x frequencies
            assert ideal / 2 <= ratio <= ideal * 2


class TestExpectedLogLik:
    def test_standard_normal_at_mode(self):
        model = make_model(m=2, d=2, sigma2=1.0)
        model.weight_mean = np.zeros(4)
        model.weight_chol = np.zeros((4, 4))
        val = expected_log_lik(0.0, np.zeros(2), model)
        assert val == pytest.approx(-0.9189385332046727, abs=1e-12)

    def test_zero_residual(self):
        model = make_model(m=1, d=1, sigma2=1.0)
        model.frequencies = np.zeros((1, 1))  # phi = [1, 0]
        model.weight_mean = np.array([1.0, 0.0])
        model.weight_chol = np.zeros((2, 2))
        assert expected_log_lik(1.0, np.zeros(1), model) == pytest.approx(-0.9189385332046727)

    def test_unit_penalty(self):
        model = make_model(m=1, d=1, sigma2=1.0)
        model.frequencies = np.zeros((1, 1))
        model.weight_mean = np.array([1.0, 0.0])  # phi.mu = 1, y = 0
        model.weight_chol = np.array([[1.0, 0.0], [0.0, 1.0]])  # phi^T LL^T phi = 1
        assert expected_log_lik(0.0, np.zeros(1), model) == pytest.approx(-1.9189385332046727)

    def test_monte_carlo_oracle(self):
        rng = np.random.default_rng(9)
        for trial in range(10):
            model = make_model(m=3, d=2, sigma2=float(rng.uniform(0.3, 2.0)), seed=trial)
            x = rng.standard_normal(2)
            y = float(rng.standard_normal())
            phi = feature_map(x, model)
            n = 100_000
            g = model.weight_mean + rng.standard_normal((n, 6)) @ model.weight_chol.T
            f = g @ phi
            ll = -0.5 * math.log(2 * math.pi * model.sigma2) - (y - f) ** 2 / (2 * model.sigma2)
            se = ll.std(ddof=1) / math.sqrt(n)
            assert abs(expected_log_lik(y, x, model) - ll.mean()) <= 3 * se


class TestKlWeights:
    def test_zero_at_prior(self):
        m = 3
        model = make_model(m=m, d=2)
        model.weight_mean = np.zeros(2 * m)
        model.weight_chol = np.eye(2 * m) / math.sqrt(m)
        assert kl_weights(model) == pytest.approx(0.0, abs=1e-12)

    def test_mean_shift_hand_value(self):
        model = make_model(m=1, d=1)
        model.weight_mean = np.array([1.0, 0.0])
        model.weight_chol = np.eye(2)
        assert kl_weights(model) == pytest.approx(0.5)

    def test_mean_perturbation_increases(self):
        m = 2
        model = make_model(m=m, d=2)
        model.weight_chol = np.eye(2 * m) / math.sqrt(m)
        model.weight_mean = np.zeros(2 * m)
        base = kl_weights(model)
        for scale in (0.1, 0.5, 2.0):
            model.weight_mean = np.full(2 * m, scale)
            assert kl_weights(model) > base

    def test_nonnegative_random(self):
        for seed in range(10):
            assert kl_weights(make_model(m=3, d=2, seed=seed)) >= 0

    def test_monte_carlo_oracle(self):
        rng = np.random.default_rng(10)
        for trial in range(10):
            m = 2
            model = make_model(m=m, d=2, seed=20 + trial, chol_scale=0.2)
            n = 100_000
            eps = rng.standard_normal((n, 2 * m))
            g = model.weight_mean + eps @ model.weight_chol.T
            cov = model.weight_chol @ model.weight_chol.T
            inv = np.linalg.inv(cov)
            delta = g - model.weight_mean
            log_q = -0.5 * np.einsum("ni,ij,nj->n", delta, inv, delta) - 0.5 * math.log(
                np.linalg.det(2 * math.pi * cov)
            )
            log_p = -0.5 * m * np.einsum("ni,ni->n", g, g) - 0.5 * 2 * m * math.log(2 * math.pi / m)
            diff = log_q - log_p
            se = diff.std(ddof=1) / math.sqrt(n)
            assert abs(kl_weights(model) - diff.mean()) <= 3 * se


class TestFrequencyPrior:
    def test_single_zero_frequency(self):
        model = make_model(m=1, d=1, tau=1.0)
        model.frequencies = np.zeros((1, 1))
        assert log_prior_frequencies(model) == pytest.approx(-0.5 * math.log(2 * math.pi))

    def test_variance_four(self):
        model = make_model(m=1, d=1, tau=4.0)
        model.frequencies = np.zeros((1, 1))
        assert log_prior_frequencies(model) == pytest.approx(-0.5 * math.log(8 * math.pi))

    def test_additive_in_m(self):
        a = make_model(m=2, d=3, tau=1.0)
        b = make_model(m=4, d=3, tau=1.0)
        a.frequencies = np.zeros((2, 3))
        b.frequencies = np.zeros((4, 3))
        assert log_prior_frequencies(b) == pytest.approx(2 * log_prior_frequencies(a))


class TestPredict:
    def test_deterministic_weights(self):
        model = make_model(m=2, d=2, sigma2=0.25)
        model.weight_chol = np.zeros((4, 4))
        _, var = predict(np.ones(2), model)
        assert var == pytest.approx(0.25)

    def test_zero_mean(self):
        model = make_model(m=3, d=2)
        model.weight_mean = np.zeros(6)
        mean, _ = predict(np.random.default_rng(3).standard_normal(2), model)
        assert mean == pytest.approx(0.0)

    def test_hand_case(self):
        model = make_model(m=1, d=1, sigma2=0.1)
        model.frequencies = np.zeros((1, 1))  # phi = [1, 0]
        model.weight_mean = np.array([2.0, 5.0])
        model.weight_chol = np.diag([0.5, 1.0])  # LL^T = diag(0.25, 1)
        mean, var = predict(np.zeros(1), model)
        assert mean == pytest.approx(2.0)
        assert var == pytest.approx(0.35)

    def test_variance_floor(self):
        for seed in range(5):
            model = make_model(m=3, d=2, sigma2=0.5, seed=seed)
            _, var = predict(np.random.default_rng(seed).standard_normal(2), model)
            assert var >= 0.5

    def test_batch_matches_single(self):
        model = make_model(m=3, d=4, seed=12)
        xs = np.random.default_rng(13).standard_normal((8, 4))
        means, variances = predict_batch(xs, model)
        for i, x in enumerate(xs):
            m1, v1 = predict(x, model)
            assert means[i] == pytest.approx(m1)
            assert variances[i] == pytest.approx(v1)
