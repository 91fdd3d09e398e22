import numpy as np
import pytest
from conftest import tensor_rule
from scipy.stats import kstest

from amsbq.abstractbenchmark import gauss_legendre_grid
from amsbq.baselines import percentile_estimate, percentile_nodes
from amsbq.benchmarks import BENCHMARKS, benchmark_ids, make_benchmark
from amsbq.epidemic import (
    I,
    S,
    SirMaxInfected,
    SirParams,
    gillespie_seir,
    gillespie_sir,
    ode_seir,
    ode_sir,
    ratio_prior_density,
    sir_integrand,
    sir_peak,
    stochastic_qoi,
)
from amsbq.forrester import COSTS, ClassicForrester, WigglyForrester, forrester_eval
from amsbq.gaussmixture import (
    BOUNDS,
    GaussMixture,
    GaussMixtureBenchmark,
    gauss_mixture_eval,
    gauss_mixture_generate,
)
from amsbq.kernels import IntegrationMeasure
from amsbq.util import make_rng


class TestForrester:
    def test_classic_values(self):
        assert forrester_eval("classic", 1, 0.0) == pytest.approx(4 * np.sin(-4), rel=1e-14)
        assert forrester_eval("classic", 1, 0.0) == pytest.approx(3.027210, abs=1e-6)
        assert forrester_eval("classic", 2, 0.0) == pytest.approx(1.513605, abs=1e-6)

    def test_wiggly_term_vanishes_at_zero(self):
        assert forrester_eval("wiggly", 1, 0.0) == pytest.approx(forrester_eval("classic", 1, 0.0), rel=1e-14)

    def test_wiggly_secondary(self):
        x = 0.37
        expected = 0.75 * forrester_eval("wiggly", 1, x) + 16 * (x - 0.5) + 10
        assert forrester_eval("wiggly", 2, x) == pytest.approx(expected, rel=1e-14)

    @pytest.mark.parametrize("x", [-0.1, 1.5])
    def test_out_of_domain(self, x):
        with pytest.raises(ValueError):
            forrester_eval("classic", 1, x)

    def test_unknown_variant_or_source(self):
        with pytest.raises(ValueError):
            forrester_eval("smooth", 1, 0.5)

        with pytest.raises(ValueError):
            forrester_eval("classic", 3, 0.5)

    def test_benchmark_rejects_points_outside_domain(self):
        with pytest.raises(ValueError):
            ClassicForrester().evaluate(1, [1.2])

    def test_ground_truth(self):
        def antiderivative(u):
            # of u^2 sin(u)
            return -(u**2) * np.cos(u) + 2 * u * np.sin(u) + 2 * np.cos(u)

        # substituting u = 12x - 4 in <f_1>
        expected = (antiderivative(8.0) - antiderivative(-4.0)) / 48
        benchmark = ClassicForrester()

        assert benchmark.ground_truth() == pytest.approx(expected, rel=1e-10)
        assert benchmark.source_integral(2) == pytest.approx(0.5 * expected + 5.0, rel=1e-10)


class TestLogisticCost:
    grid = np.linspace(0.0, 1.0, 10001)[:, None]

    @pytest.mark.parametrize("variant", ["classic", "wiggly"])
    def test_range(self, variant):
        for cost in COSTS[variant]:
            values = cost(self.grid)
            assert np.all(values > 0)
            assert np.all(values <= 1)
            assert np.max(values) == pytest.approx(1.0)

    def test_classic_structure(self):
        c1, c2 = COSTS["classic"]
        ratio = c2(self.grid) / c1(self.grid)
        x = self.grid[:, 0]

        # two orders of magnitude cheaper for large x, almost equal close to zero
        assert np.all(ratio[x >= 0.6] <= 0.02)
        assert np.all(ratio[x <= 0.05] >= 0.5)

    def test_wiggly_secondary_has_interior_minimum(self):
        _, c2 = COSTS["wiggly"]
        x_min = self.grid[np.argmin(c2(self.grid)), 0]

        assert 0.3 < x_min < 0.85

    @pytest.mark.parametrize("benchmark_id", sorted(BENCHMARKS))
    def test_cost_models_within_bounds(self, benchmark_id):
        benchmark = make_benchmark(benchmark_id)
        benchmark.cost_model.check(benchmark.measure, make_rng(0, "cost-check"), n=10000)


class TestPercentileEstimator:
    def test_identity(self, unit_interval):
        assert percentile_estimate(lambda x: x[0], unit_interval, 4) == pytest.approx(0.625)

    @pytest.mark.parametrize("n", [1, 7, 100])
    def test_constant(self, unit_interval, n):
        assert percentile_estimate(lambda x: 2.5, unit_interval, n) == pytest.approx(2.5)

    def test_forrester(self, unit_interval):
        benchmark = ClassicForrester()
        f1 = benchmark.sources()[0]
        n = 2048

        estimate = percentile_estimate(f1, unit_interval, n)
        error = estimate - benchmark.ground_truth()

        # leading term of the right Riemann sum error
        leading = (f1(np.ones(1)) - f1(np.zeros(1))) / (2 * n)
        assert error == pytest.approx(leading, abs=1e-5)
        assert abs(error / benchmark.ground_truth()) < 1e-2

    def test_tensor_grid(self, unit_square):
        nodes = percentile_nodes(unit_square, 3)

        assert nodes.shape == (9, 2)
        assert np.max(nodes) == 1.0
        assert np.min(nodes) == pytest.approx(1 / 3)

    def test_invalid_count(self, unit_interval):
        with pytest.raises(ValueError):
            percentile_nodes(unit_interval, 0)


class TestGillespie:
    def test_no_infections(self):
        trajectory = gillespie_seir(SirParams(a=0.0), seed=0)

        assert trajectory.num_events == 1
        assert trajectory.max_infected == 1
        assert not trajectory.is_outbreak

    def test_no_recovery(self):
        params = SirParams(a=5.0, b=0.0, gamma=10.0)
        trajectory = gillespie_seir(params, seed=1)

        np.testing.assert_array_equal(trajectory.states[-1], [0, 0, params.N, 0])
        assert trajectory.is_outbreak

    def test_population_is_conserved(self):
        for seed in range(10):
            trajectory = gillespie_seir(SirParams.from_ratio(3.0), seed=seed)
            np.testing.assert_array_equal(trajectory.states.sum(axis=1), 100)
            assert np.all(np.diff(trajectory.times) >= 0)

    def test_deterministic(self):
        a = gillespie_seir(SirParams.from_ratio(5.0), seed=42)
        b = gillespie_seir(SirParams.from_ratio(5.0), seed=42)

        np.testing.assert_array_equal(a.times, b.times)
        np.testing.assert_array_equal(a.states, b.states)

    def test_sir_variant(self):
        trajectory = gillespie_sir(SirParams.from_ratio(4.0), seed=3)

        np.testing.assert_array_equal(trajectory.states[:, 1], 0)
        assert trajectory.states[-1, I] == 0

    def test_recovery_time_is_exponential(self):
        b = 2.0
        params = SirParams(a=0.0, b=b)
        times = np.array([gillespie_seir(params, seed=seed).times[-1] for seed in range(10000)])

        assert kstest(times, "expon", args=(0, 1 / b)).pvalue > 0.01

    @pytest.mark.slow
    def test_mean_matches_ode(self):
        params = SirParams.from_ratio(10.0)
        t_grid = np.linspace(0.0, 10.0, 51)

        outbreaks = []
        for seed in range(100):
            trajectory = gillespie_seir(params, seed=seed)
            if trajectory.is_outbreak:
                outbreaks.append(trajectory.sample(t_grid)[:, I])

        outbreaks = np.array(outbreaks)
        mean = outbreaks.mean(axis=0)
        standard_error = outbreaks.std(axis=0, ddof=1) / np.sqrt(len(outbreaks))

        reference = ode_seir(params, t_grid).states[:, I]

        # the mean field misses the random duration of the early stochastic phase, whose effect on the mean is of the
        # order of the demographic fluctuations sqrt(N)
        allowance = np.sqrt(params.N)
        assert len(outbreaks) >= 80
        assert np.all(np.abs(mean - reference) <= 3 * standard_error + allowance)


class TestOde:
    def test_conservation(self):
        trajectory = ode_sir(SirParams.from_ratio(7.0), np.linspace(0.0, 20.0, 201))
        np.testing.assert_allclose(trajectory.states.sum(axis=1), 100, rtol=1e-8)

    def test_subthreshold_epidemic_fades(self):
        trajectory = ode_sir(SirParams.from_ratio(0.8), np.linspace(0.0, 10.0, 101))
        assert np.all(np.diff(trajectory.states[:, I]) < 0)
        assert sir_peak(SirParams.from_ratio(0.8)) == (1.0, 0.0)

    def test_peak_matches_fine_grid(self):
        params = SirParams.from_ratio(10.0)
        max_infected, time_of_max = sir_peak(params)

        t_grid = np.linspace(0.0, 5.0, 50001)
        reference = ode_sir(params, t_grid)

        assert max_infected == pytest.approx(reference.max_infected, rel=1e-4)
        assert time_of_max == pytest.approx(reference.time_of_max, abs=1e-3)

    def test_seir_is_conserved(self):
        trajectory = ode_seir(SirParams.from_ratio(5.0), np.linspace(0.0, 10.0, 101))
        np.testing.assert_allclose(trajectory.states.sum(axis=1), 100, rtol=1e-8)
        assert trajectory.states[-1, S] < 99


class TestSirIntegrand:
    def test_secondary_is_deterministic(self):
        assert sir_integrand(2, 10.0, "max-infected") == sir_integrand(2, 10.0, "max-infected")

    def test_primary_is_deterministic_per_seed(self):
        a = sir_integrand(1, 10.0, "max-infected", reps=10, seed=3)
        b = sir_integrand(1, 10.0, "max-infected", reps=10, seed=3)

        assert a == b

    def test_prior_is_folded_in(self):
        max_infected, _ = sir_peak(SirParams.from_ratio(10.0))
        expected = max_infected * ratio_prior_density(10.0) * 60.0

        assert sir_integrand(2, 10.0, "max-infected") == pytest.approx(expected, rel=1e-12)

    def test_secondary_is_biased(self):
        # the incubation period of the primary model delays the peak
        primary = sir_integrand(1, 10.0, "time-of-max", reps=20, seed=0)
        secondary = sir_integrand(2, 10.0, "time-of-max")

        assert primary > secondary

    def test_outside_domain(self):
        with pytest.raises(ValueError):
            sir_integrand(2, 0.5, "max-infected")

    def test_unknown_qoi(self):
        with pytest.raises(ValueError):
            stochastic_qoi(10.0, "duration", reps=1, seed=0)

    def test_near_threshold(self):
        # barely above the threshold most simulations die out immediately
        value = stochastic_qoi(1.0, "max-infected", reps=1, seed=0, max_reps=64)
        assert value >= 1.0

    def test_benchmark(self):
        benchmark = SirMaxInfected(reps=5, seed=1)
        design = benchmark.initial_design("amsbq", 0)

        np.testing.assert_array_equal(design.sources, [1, 2, 2])
        assert benchmark.initial_cost(design) == pytest.approx(1.001)


class TestGaussMixture:
    def test_basis_at_its_mean(self):
        mixture = gauss_mixture_generate(0).mixtures[0]

        for k in range(5):
            value = mixture.basis(mixture.means[k])[0, k]
            expected = (2 * np.pi * np.linalg.det(mixture.covariances[k])) ** -0.5
            assert value == pytest.approx(expected, rel=1e-12)

    def test_zero_weights(self, rng):
        mixture = gauss_mixture_generate(0).mixtures[0]
        silent = GaussMixture(mixture.means, mixture.covariances, np.zeros(len(mixture.weights)))

        np.testing.assert_array_equal(silent(rng.uniform(-3, 3, size=(10, 2))), 0.0)

    def test_sources_are_consecutive_perturbations(self):
        sources = gauss_mixture_generate(0)
        m1, m2, m3 = (m.means for m in sources.mixtures)

        assert len(sources) == 3
        assert np.all(m2 >= m1) and np.all(m3 >= m2)
        assert np.all(m2 - m1 <= 0.3)

    def test_deterministic(self):
        a = gauss_mixture_generate(5)
        b = gauss_mixture_generate(5)

        assert gauss_mixture_eval(a, 2, [0.1, -0.4]) == gauss_mixture_eval(b, 2, [0.1, -0.4])

    def test_indefinite_covariance(self):
        with pytest.raises(ValueError):
            GaussMixture(np.zeros((1, 2)), -np.eye(2)[None, :, :], np.ones(1))

    def test_ground_truth_matches_dense_quadrature(self):
        benchmark = GaussMixtureBenchmark()
        mixture = benchmark.mixture_sources.mixtures[0]

        points, weights = tensor_rule(IntegrationMeasure.box(*BOUNDS), 512)
        oracle = sum(
            float(weights[i : i + 65536] @ mixture(points[i : i + 65536])) for i in range(0, len(points), 65536)
        )

        assert benchmark.ground_truth() == pytest.approx(oracle, abs=1e-6)

    def test_initial_design(self):
        benchmark = GaussMixtureBenchmark()
        design = benchmark.initial_design("amsbq", 3)

        np.testing.assert_array_equal(design.sources, [1, 2, 2, 3, 3])
        assert benchmark.initial_cost(design) == pytest.approx(1.2)
        np.testing.assert_array_equal(benchmark.initial_design("vbq", 3).sources, [1, 1, 1])


class TestRegistry:
    def test_ids(self):
        assert benchmark_ids() == ["forrester-classic", "forrester-wiggly", "sir-max", "sir-argmax", "gauss2d"]

    def test_unknown(self):
        with pytest.raises(KeyError):
            make_benchmark("branin")

    @pytest.mark.parametrize("benchmark_id", ["forrester-classic", "forrester-wiggly", "gauss2d"])
    def test_initial_designs(self, benchmark_id):
        benchmark = make_benchmark(benchmark_id)
        design = benchmark.initial_design("amsbq", 7)
        again = benchmark.initial_design("amsbq", 7)

        np.testing.assert_array_equal(design.X, again.X)
        np.testing.assert_array_equal(design.y, again.y)
        assert set(design.sources) == set(range(1, benchmark.num_sources + 1))
        assert np.all(benchmark.initial_design("vbq", 7).sources == 1)

        with pytest.raises(KeyError):
            benchmark.initial_design("pe", 7)

    def test_shared_primary_location(self):
        benchmark = WigglyForrester()
        design = benchmark.initial_design("amsbq", 0)

        np.testing.assert_array_equal(design[0].x, design[1].x)

    def test_describe(self):
        assert ClassicForrester().describe() == {"id": "forrester-classic", "sources": "2", "domain": "[0, 1]"}

    def test_gauss_legendre_grid(self, unit_square):
        points, weights = gauss_legendre_grid(unit_square, 8)

        assert points.shape == (64, 2)
        assert weights.sum() == pytest.approx(1.0)
        assert weights @ (points[:, 0] * points[:, 1]) == pytest.approx(0.25)
