import itertools

import numpy as np
import pytest
from conftest import (
    brute_force_initial_error,
    brute_force_kernel_mean,
    random_box,
    random_hyper,
    random_state,
    rbf,
    tensor_rule,
)

from amsbq.kernels import IntegrationMeasure, initial_error
from amsbq.msgp import Dataset, GpState, Hyperparams, posterior_cross_cov, predict
from amsbq.quadrature import (
    CandidateBatch,
    DegenerateCandidateError,
    candidate_covariance,
    integral_posterior,
    myopic_rho_squared,
    rho_squared,
    variance_reduction,
)


def monte_carlo_moments(state: GpState, measure: IntegrationMeasure, samples: int, rng, nodes: int = 256):
    """
    Mean and variance of <f_1> over posterior sample paths drawn at quadrature nodes, with their standard errors.
    """
    points, weights = tensor_rule(measure, nodes)
    mean, _ = predict(state, 1, points)
    cov = posterior_cross_cov(state, 1, points, 1, points)

    integrals = []
    for _ in range(samples // 10000):
        paths = rng.multivariate_normal(mean, cov, size=10000, method="eigh")
        integrals.append(paths @ weights)

    integrals = np.concatenate(integrals)
    mc_mean = float(np.mean(integrals))
    mc_var = float(np.var(integrals, ddof=1))

    return mc_mean, mc_var, np.sqrt(mc_var / len(integrals)), mc_var * np.sqrt(2.0 / (len(integrals) - 1))


class TestIntegralPosterior:
    def test_prior(self, unit_interval):
        hyper = Hyperparams(0.1, W=[[0.0]], eta=[1.0], noise=0.0)
        Z = integral_posterior(GpState(hyper, Dataset(1)), unit_interval)

        assert Z.mean == 0.0
        assert Z.variance == pytest.approx(0.230662, abs=1e-6)

    def test_uncorrelated_secondary_data(self, rng, unit_interval):
        hyper = Hyperparams(0.1, W=np.zeros((2, 2)), eta=[1.0, 1.0], noise=0.0)
        data = Dataset.from_arrays([2, 2, 2], [0.1, 0.5, 0.9], rng.standard_normal(3))

        Z = integral_posterior(GpState(hyper, data), unit_interval)
        prior = integral_posterior(GpState(hyper, Dataset(1)), unit_interval)

        assert Z.mean == pytest.approx(prior.mean, abs=1e-14)
        assert Z.variance == pytest.approx(prior.variance, rel=1e-12)

    def test_variance_shrinks_with_data(self, rng, unit_square):
        state = random_state(rng, 3, 5, unit_square, noise=1e-3)
        before = integral_posterior(state, unit_square)
        after = integral_posterior(state.conditioned(1, unit_square.sample(rng, 3)), unit_square)

        assert 0 < after.variance <= before.variance <= initial_error(state.kernel, unit_square)

    def test_single_source_is_scalar_bq(self, rng):
        """
        With one source the integral posterior is the one of vanilla BQ on the scalar GP.
        """
        for _ in range(20):
            measure = random_box(rng, int(rng.integers(1, 3)))
            noise = rng.uniform(1e-3, 1e-1)
            state = random_state(rng, 1, int(rng.integers(1, 8)), measure, noise=noise)

            variance = float(state.hyper.W[0, 0] ** 2 + state.hyper.eta[0])
            lengthscale = state.hyper.lengthscale
            X, y = state.data.X, state.data.y

            K = variance * rbf(X, X, lengthscale) + (noise + state.jitter) * np.eye(len(X))
            z = variance * brute_force_kernel_mean(X, lengthscale, measure, nodes=100)

            Z = integral_posterior(state, measure)
            expected_variance = variance * brute_force_initial_error(lengthscale, measure) - z @ np.linalg.solve(K, z)

            assert Z.mean == pytest.approx(z @ np.linalg.solve(K, y), rel=1e-7, abs=1e-9)
            assert Z.variance == pytest.approx(expected_variance, rel=1e-6, abs=1e-10)

    @pytest.mark.slow
    @pytest.mark.parametrize("instance", range(5))
    def test_matches_sample_paths(self, instance):
        rng = np.random.default_rng(instance)
        measure = IntegrationMeasure.box((0.0, 1.0))

        hyper = random_hyper(rng, 2, lengthscale=rng.uniform(0.2, 0.4), noise=1e-4)
        data = Dataset.from_arrays([1, 2, 2, 1], rng.random(4), rng.standard_normal(4))
        state = GpState(hyper, data)

        Z = integral_posterior(state, measure)
        mc_mean, mc_var, mean_error, var_error = monte_carlo_moments(state, measure, 100000, rng)

        assert abs(Z.mean - mc_mean) < 4 * mean_error
        assert abs(Z.variance - mc_var) < 4 * var_error


class TestRhoSquared:
    def test_explains_variance_reduction(self, rng):
        """
        rho^2 V[Z|D] equals the reduction of the integral variance obtained by actually conditioning on the batch.
        """
        for _ in range(200):
            L = int(rng.integers(1, 4))
            measure = random_box(rng, int(rng.integers(1, 3)))
            state = random_state(rng, L, int(rng.integers(0, 9)), measure, noise=1e-3)

            size = int(rng.integers(1, 4))
            cand = CandidateBatch(rng.integers(1, L + 1, size=size), measure.sample(rng, size))

            Z = integral_posterior(state, measure)
            rho2 = rho_squared(state, cand, measure, Z)

            conditioned = integral_posterior(state.conditioned(cand.sources, cand.locations), measure)

            assert 0.0 <= rho2 <= 1.0
            assert rho2 * Z.variance == pytest.approx(Z.variance - conditioned.variance, rel=1e-7, abs=1e-12)

    def test_myopic_matches_batch(self, rng, unit_square):
        state = random_state(rng, 3, 6, unit_square, noise=1e-3)
        X = unit_square.sample(rng, 8)

        for l in (1, 2, 3):
            vectorized = myopic_rho_squared(state, l, X, unit_square)
            single = [rho_squared(state, CandidateBatch.single(l, x), unit_square) for x in X]
            np.testing.assert_allclose(vectorized, single, rtol=1e-8, atol=1e-14)

    def test_batch_explains_at_least_its_parts(self, rng):
        for _ in range(100):
            L = int(rng.integers(1, 4))
            measure = random_box(rng, int(rng.integers(1, 3)))
            state = random_state(rng, L, int(rng.integers(0, 7)), measure, noise=1e-3)

            size = int(rng.integers(2, 5))
            cand = CandidateBatch(rng.integers(1, L + 1, size=size), measure.sample(rng, size))

            Z = integral_posterior(state, measure)
            full = rho_squared(state, cand, measure, Z)

            for k in range(1, size):
                for subset in itertools.combinations(range(size), k):
                    part = CandidateBatch(cand.sources[list(subset)], cand.locations[list(subset)])
                    assert rho_squared(state, part, measure, Z) <= full + 1e-8

    def test_conditioned_variance_ignores_observed_values(self, rng):
        for _ in range(50):
            L = int(rng.integers(1, 4))
            measure = random_box(rng, int(rng.integers(1, 3)))
            state = random_state(rng, L, int(rng.integers(0, 7)), measure, noise=1e-3)

            size = int(rng.integers(1, 4))
            cand = CandidateBatch(rng.integers(1, L + 1, size=size), measure.sample(rng, size))

            variances = [
                integral_posterior(state.conditioned(cand.sources, cand.locations, y), measure).variance
                for y in (np.zeros(size), rng.normal(0.0, 10.0, size=size))
            ]

            assert variances[0] == pytest.approx(variances[1], rel=1e-12, abs=1e-15)

    def test_observed_point(self, unit_interval):
        hyper = Hyperparams(0.1, W=[[1.0], [0.7]], eta=[0.2, 0.3], noise=0.0)
        data = Dataset.from_arrays([1, 2, 1], [0.2, 0.5, 0.8], [1.0, -0.5, 0.3])
        state = GpState(hyper, data)

        for triplet in data:
            assert rho_squared(state, CandidateBatch.single(triplet.l, triplet.x), unit_interval) < 1e-6
            assert myopic_rho_squared(state, triplet.l, triplet.x[None, :], unit_interval)[0] < 1e-6

    def test_uncorrelated_source(self, rng, unit_interval):
        hyper = Hyperparams(0.2, W=np.zeros((2, 2)), eta=[1.0, 1.0], noise=1e-3)
        data = Dataset.from_arrays([1, 2, 1, 2], rng.random(4), rng.standard_normal(4))
        state = GpState(hyper, data)

        X = unit_interval.sample(rng, 5)
        np.testing.assert_allclose(myopic_rho_squared(state, 2, X, unit_interval), 0.0, atol=1e-12)
        assert rho_squared(state, CandidateBatch(2, X), unit_interval) == pytest.approx(0.0, abs=1e-12)

    def test_bounded(self, rng):
        for _ in range(1000):
            L = int(rng.integers(1, 4))
            measure = random_box(rng, 1)
            state = random_state(rng, L, int(rng.integers(0, 6)), measure, noise=1e-4)

            rho2 = myopic_rho_squared(state, int(rng.integers(1, L + 1)), measure.sample(rng, 1), measure)
            assert 0.0 <= rho2[0] <= 1.0

    def test_duplicated_noiseless_candidates_are_degenerate(self, unit_interval):
        hyper = Hyperparams(0.1, W=[[1.0]], eta=[1.0], noise=0.0)
        state = GpState(hyper, Dataset(1))

        cand = CandidateBatch(1, [[0.4], [0.4]])
        V = candidate_covariance(state, cand)
        assert np.linalg.matrix_rank(V) == 1

        # the jitter fallback keeps such batches usable, a batch explains at most what one of its copies does
        rho2 = rho_squared(state, cand, unit_interval)
        assert rho2 == pytest.approx(rho_squared(state, CandidateBatch.single(1, 0.4), unit_interval), rel=1e-6)

    def test_degenerate_error(self, unit_interval):
        hyper = Hyperparams(0.1, W=[[1.0]], eta=[1.0], noise=0.0)
        state = GpState(hyper, Dataset(1))

        with pytest.raises(DegenerateCandidateError):
            rho_squared(state, CandidateBatch(1, [[np.nan]]), unit_interval)


class TestVarianceReduction:
    def test_matches_two_posteriors(self, rng, unit_square):
        state = random_state(rng, 2, 5, unit_square, noise=1e-3)
        cand = CandidateBatch([1, 2], unit_square.sample(rng, 2))

        before = integral_posterior(state, unit_square).variance
        after = integral_posterior(state.conditioned(cand.sources, cand.locations), unit_square).variance

        assert variance_reduction(state, cand, unit_square) == pytest.approx(before - after, rel=1e-6)

    def test_uncorrelated_candidate(self, unit_interval):
        hyper = Hyperparams(0.2, W=np.zeros((2, 2)), eta=[1.0, 1.0], noise=0.0)
        state = GpState(hyper, Dataset(1))

        assert variance_reduction(state, CandidateBatch.single(2, 0.5), unit_interval) == 0.0

    def test_perfect_step(self):
        # with a huge lengthscale a single noiseless evaluation determines the integral
        measure = IntegrationMeasure.box((0.0, 1.0))
        hyper = Hyperparams(1e3, W=[[0.0]], eta=[1.0], noise=0.0)
        state = GpState(hyper, Dataset(1))
        Z = integral_posterior(state, measure)

        reduction = variance_reduction(state, CandidateBatch.single(1, 0.5), measure, Z)
        assert reduction == pytest.approx(Z.variance, rel=1e-6)
