import numpy as np
import pytest
from scipy.special import gamma, kv
from scipy.stats import multivariate_normal

from mavebo.errors import DimensionError, IllConditionedError
from mavebo.gp import (HyperBounds, KernelSpec, fit_gp, fit_hyperparameters, kernel_eval,
                       kernel_matrix, log_marginal_likelihood)
from mavebo.gp import _cholesky_with_nugget, _kernel_and_grads


def matern_bessel(nu, tau2, r):
    """General Matern form through the modified Bessel function of the second kind."""
    s = np.sqrt(2 * nu) * r
    return tau2 * 2 ** (1 - nu) / gamma(nu) * s**nu * kv(nu, s)


def random_model(rng, n=20, d=2, nugget=1e-10):
    Z = rng.uniform(-1, 1, (n, d))
    Y = np.sin(2 * Z[:, 0]) + np.cos(Z[:, -1]) + 0.1 * rng.standard_normal(n)
    spec = KernelSpec("se", rng.uniform(0.5, 2.0), tuple(rng.uniform(0.2, 0.8, d)))
    return fit_gp(spec, Z, Y, nugget=nugget)


class TestKernels:
    def test_se_diagonal(self):
        spec = KernelSpec("se", 2.7, (0.3, 1.5))
        assert kernel_eval(spec, [0.4, -1.0], [0.4, -1.0]) == pytest.approx(2.7)

    def test_se_unit_distance(self):
        assert kernel_eval(KernelSpec("se", 1.0, (1.0,)), [0.0], [1.0]) == pytest.approx(
            np.exp(-0.5), rel=1e-14)

    def test_matern_half(self):
        spec = KernelSpec("matern", 1.0, (1.0,), nu=0.5)
        assert kernel_eval(spec, [0.0], [1.0]) == pytest.approx(np.exp(-1.0), rel=1e-14)

    @pytest.mark.parametrize("nu", [0.5, 1.5, 2.5])
    def test_matern_closed_forms_match_bessel(self, nu):
        spec = KernelSpec("matern", 1.3, (0.7, 2.0), nu=nu)
        rng = np.random.default_rng(0)
        for _ in range(20):
            a, b = rng.standard_normal(2), rng.standard_normal(2)
            r = np.sqrt(np.sum(((a - b) / np.array([0.7, 2.0])) ** 2))
            assert kernel_eval(spec, a, b) == pytest.approx(matern_bessel(nu, 1.3, r), rel=1e-10)

    def test_symmetric(self):
        spec = KernelSpec("matern", 1.0, (0.5, 0.5), nu=1.5)
        assert kernel_eval(spec, [0.1, 0.2], [0.7, -0.3]) == kernel_eval(spec, [0.7, -0.3],
                                                                         [0.1, 0.2])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            kernel_eval(KernelSpec("se", 1.0, (1.0, 1.0)), [0.0], [1.0])

    def test_invalid_specs(self):
        with pytest.raises(ValueError):
            KernelSpec("se", 0.0, (1.0,))
        with pytest.raises(ValueError):
            KernelSpec("se", 1.0, (-1.0,))
        with pytest.raises(ValueError):
            KernelSpec("matern", 1.0, (1.0,), nu=0.7)
        with pytest.raises(ValueError):
            KernelSpec("rbfish", 1.0, (1.0,))

    @pytest.mark.parametrize("family,nu", [("se", 2.5), ("matern", 0.5), ("matern", 1.5),
                                           ("matern", 2.5)])
    def test_psd(self, family, nu):
        spec = KernelSpec(family, 2.0, (0.3, 0.9, 0.5), nu=nu)
        K = kernel_matrix(spec, np.random.default_rng(1).standard_normal((40, 3)))
        np.testing.assert_allclose(K, K.T)
        assert np.linalg.eigvalsh(K).min() >= -1e-8 * 2.0

    @pytest.mark.parametrize("family,nu", [("se", 2.5), ("matern", 1.5), ("matern", 2.5)])
    def test_gradients_match_finite_differences(self, family, nu):
        Z = np.random.default_rng(2).standard_normal((6, 2))
        p = np.log([1.7, 0.6, 1.3])

        def K_of(q):
            return kernel_matrix(KernelSpec(family, np.exp(q[0]), tuple(np.exp(q[1:])), nu), Z)

        _, grads = _kernel_and_grads(KernelSpec(family, 1.7, (0.6, 1.3), nu), Z)
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1e-6
            fd = (K_of(p + e) - K_of(p - e)) / 2e-6
            np.testing.assert_allclose(grads[k], fd, atol=1e-7)


class TestFit:
    def test_scalar_factor(self):
        model = fit_gp(KernelSpec("se", 2.0, (1.0,)), [[0.3]], [1.0], nugget=0.5)
        assert model.chol[0, 0] == pytest.approx(np.sqrt(2.5))

    def test_duplicates_with_nugget(self):
        model = fit_gp(KernelSpec("se", 1.0, (0.5,)), [[0.1], [0.1], [0.4]], [1.0, 1.0, 2.0],
                       nugget=1e-6)
        assert np.all(np.isfinite(model.alpha))

    def test_nugget_escalation(self):
        # exact duplicates with no jitter cannot be factorised
        model = fit_gp(KernelSpec("se", 1.0, (0.5,)), [[0.1], [0.1]], [1.0, 1.0], nugget=0.0)
        assert model.nugget > 0

    @pytest.mark.parametrize("seed", range(5))
    def test_reconstruction(self, seed):
        model = random_model(np.random.default_rng(seed))
        K = kernel_matrix(model.kernel, model.train_inputs) + model.nugget * np.eye(20)
        rel = np.linalg.norm(model.chol @ model.chol.T - K) / np.linalg.norm(K)
        assert rel < 1e-8

    def test_deterministic(self):
        a = random_model(np.random.default_rng(3))
        b = random_model(np.random.default_rng(3))
        np.testing.assert_array_equal(a.chol, b.chol)

    def test_shape_errors(self):
        with pytest.raises(DimensionError):
            fit_gp(KernelSpec("se", 1.0, (1.0,)), np.zeros((3, 1)), np.zeros(2))
        with pytest.raises(DimensionError):
            fit_gp(KernelSpec("se", 1.0, (1.0,)), np.zeros((3, 2)), np.zeros(3))

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            fit_gp(KernelSpec("se", 1.0, (1.0,)), [[np.nan], [0.0]], [0.0, 1.0])

    def test_ill_conditioned_error(self):
        # an indefinite matrix stays indefinite under the largest admissible jitter
        with pytest.raises(IllConditionedError):
            _cholesky_with_nugget(-np.eye(3), 1.0, 1e-10)


class TestPosterior:
    def test_interpolates(self):
        model = random_model(np.random.default_rng(0), nugget=0.0)
        for z, y in zip(model.train_inputs, model.train_values):
            pred = model.posterior(z)
            assert pred.mean == pytest.approx(y, abs=1e-6)
            assert pred.variance <= 1e-6

    def test_prior_reversion(self):
        spec = KernelSpec("se", 1.5, (0.2, 0.2))
        model = fit_gp(spec, [[0.0, 0.0], [0.1, 0.0]], [1.0, 2.0], mean=0.3, nugget=0.0)
        pred = model.posterior([5.0, 5.0])
        assert pred.mean == pytest.approx(0.3, abs=1e-6)
        assert pred.variance == pytest.approx(1.5, abs=1e-6)

    def test_single_point(self):
        spec = KernelSpec("se", 2.0, (0.7,))
        model = fit_gp(spec, [[0.2]], [1.5], mean=0.0, nugget=0.1)
        z = 0.9
        expected = kernel_eval(spec, [z], [0.2]) * 1.5 / 2.1
        assert model.posterior([z]).mean == pytest.approx(expected, rel=1e-12)

    def test_variance_non_negative_and_bounded(self):
        model = random_model(np.random.default_rng(4))
        _, var = model.predict(np.random.default_rng(5).uniform(-2, 2, (500, 2)))
        assert np.all(var >= 0) and np.all(var <= model.kernel.signal_variance + 1e-12)

    def test_conditioning_shrinks_variance(self):
        rng = np.random.default_rng(6)
        spec = KernelSpec("se", 1.0, (0.4, 0.4))
        Z = rng.uniform(-1, 1, (10, 2))
        Y = rng.standard_normal(10)
        probes = rng.uniform(-1, 1, (50, 2))
        _, v0 = fit_gp(spec, Z, Y, nugget=0.0).predict(probes)
        Z2 = np.vstack([Z, rng.uniform(-1, 1, (1, 2))])
        _, v1 = fit_gp(spec, Z2, np.append(Y, 0.3), nugget=0.0).predict(probes)
        assert np.all(v1 <= v0 + 1e-8)

    def test_mean_linear_in_responses(self):
        rng = np.random.default_rng(7)
        spec = KernelSpec("matern", 1.0, (0.5, 0.5), nu=2.5)
        Z = rng.uniform(-1, 1, (12, 2))
        Y = rng.standard_normal(12)
        probes = rng.uniform(-1, 1, (30, 2))
        m1, _ = fit_gp(spec, Z, Y).predict(probes)
        m2, _ = fit_gp(spec, Z, 2 * Y + 1).predict(probes)
        np.testing.assert_allclose(m2, 2 * m1 + 1, atol=1e-8)


class TestLikelihood:
    def test_scalar(self):
        model = fit_gp(KernelSpec("se", 1.0, (1.0,)), [[0.0]], [0.0], mean=0.0, nugget=0.0)
        assert log_marginal_likelihood(model) == pytest.approx(-0.5 * np.log(2 * np.pi))
        assert log_marginal_likelihood(model) == pytest.approx(-0.91894, abs=1e-5)

    def test_constant_data_at_mean(self):
        model = fit_gp(KernelSpec("se", 1.0, (1.0,)), [[0.0], [1.0]], [2.0, 2.0], mean=2.0)
        r = model.train_values - model.prior_mean
        assert r @ model.alpha == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_dense_agreement(self, seed):
        model = random_model(np.random.default_rng(seed), n=15)
        cov = kernel_matrix(model.kernel, model.train_inputs) + model.nugget * np.eye(15)
        dense = multivariate_normal(np.full(15, model.prior_mean), cov).logpdf(model.train_values)
        assert log_marginal_likelihood(model) == pytest.approx(dense, abs=1e-8)


class TestHyperparameters:
    def test_recovers_lengthscales(self):
        truth = np.array([0.3, 0.6])
        spec = KernelSpec("se", 1.0, tuple(truth))
        hits = 0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            Z = rng.uniform(-1, 1, (60, 2))
            K = kernel_matrix(spec, Z) + 1e-8 * np.eye(60)
            Y = np.linalg.cholesky(K) @ rng.standard_normal(60)
            fit = fit_hyperparameters(Z, Y, "se", rng=np.random.default_rng(100 + seed))
            hits += np.all(np.abs(np.log(fit.lengthscales) - np.log(truth)) <= 1.0)
        assert hits >= 7

    def test_not_worse_than_heuristic(self):
        rng = np.random.default_rng(1)
        Z = rng.uniform(-1, 1, (25, 2))
        Y = np.sin(3 * Z[:, 0]) * Z[:, 1]
        fit = fit_hyperparameters(Z, Y, "matern", rng=rng, nu=2.5)
        iu = np.triu_indices(25, 1)
        med = np.median(np.linalg.norm(Z[:, None] - Z[None], axis=-1)[iu])
        heur = KernelSpec("matern", np.var(Y), (med, med), 2.5)
        assert log_marginal_likelihood(fit_gp(fit, Z, Y)) >= \
            log_marginal_likelihood(fit_gp(heur, Z, Y)) - 1e-9

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        Z = rng.uniform(-1, 1, (20, 1))
        Y = Z[:, 0] ** 2
        a = fit_hyperparameters(Z, Y, rng=np.random.default_rng(9))
        b = fit_hyperparameters(Z, Y, rng=np.random.default_rng(9))
        assert a == b

    def test_respects_bounds(self):
        rng = np.random.default_rng(3)
        Z = rng.uniform(-1, 1, (20, 2))
        bounds = HyperBounds((0.5, 2.0), (0.1, 0.4))
        fit = fit_hyperparameters(Z, np.cos(4 * Z[:, 0]), bounds=bounds, rng=rng)
        assert 0.5 - 1e-12 <= fit.signal_variance <= 2.0 + 1e-12
        assert all(0.1 - 1e-12 <= t <= 0.4 + 1e-12 for t in fit.lengthscales)

    def test_bad_bounds(self):
        with pytest.raises(ValueError):
            HyperBounds((0.0, 1.0), (0.1, 1.0))
