"""
Three-source benchmark on [-3, 3]^2: linear combinations of K = 20 Gaussian basis functions. The secondary sources
are built by consecutively perturbing the primary one, so f_2 is closer to f_1 than f_3.
"""

import functools
from dataclasses import dataclass

import numpy as np

from .abstractbenchmark import AbstractBenchmark, gauss_legendre_grid
from .acquisition import CostModel
from .kernels import IntegrationMeasure, as_points
from .logging import get_logger
from .util import make_rng

logger = get_logger("gaussmixture")

NUM_BASIS_FUNCTIONS = 20
NUM_SOURCES = 3
BOUNDS = ((-3.0, 3.0), (-3.0, 3.0))
COSTS = (1.0, 0.05, 0.05)

# perturbation magnitudes applied from one source to the next
MEAN_SHIFT = 0.3
COVARIANCE_INFLATION = 0.2
WEIGHT_NOISE_RELATIVE = 0.1
WEIGHT_NOISE_ABSOLUTE = 0.05

GROUND_TRUTH_NODES = 1024


@dataclass(frozen=True, eq=False)
class GaussMixture:
    """
    f(x) = sum_k z_k Phi_k(x) with Phi_k(x) = (2 pi |A_k|)^(-1/2) exp(-(x - m_k)^T A_k^-1 (x - m_k) / 2).
    """

    means: np.ndarray
    covariances: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if np.any(np.linalg.eigvalsh(self.covariances) <= 0):
            raise ValueError("covariances must be positive definite")

    @property
    def normalizations(self) -> np.ndarray:
        return (2.0 * np.pi * np.linalg.det(self.covariances)) ** -0.5

    def basis(self, X) -> np.ndarray:
        """
        Phi_k at every row of X, shape (n, K).
        """
        X = as_points(X, self.means.shape[1])
        diff = X[:, None, :] - self.means[None, :, :]
        mahalanobis = np.einsum("nki,kij,nkj->nk", diff, np.linalg.inv(self.covariances), diff)
        return self.normalizations[None, :] * np.exp(-0.5 * mahalanobis)

    def __call__(self, X) -> np.ndarray:
        return self.basis(X) @ self.weights


@dataclass(frozen=True, eq=False)
class GaussMixtureSources:
    mixtures: tuple[GaussMixture, ...]

    def __len__(self) -> int:
        return len(self.mixtures)


def gauss_mixture_generate(
    seed: int, num_sources: int = NUM_SOURCES, K: int = NUM_BASIS_FUNCTIONS
) -> GaussMixtureSources:
    rng = make_rng(seed, "gauss-mixture")

    means = rng.uniform(-3.0, 3.0, size=(K, 2))
    u = rng.standard_normal((K, 2))
    kappa = rng.uniform(0.0, 1.0, size=(K, 2))
    covariances = np.array([np.diag(kappa[k]) + np.outer(u[k], u[k]) for k in range(K)])
    weights = rng.standard_normal(K)

    mixtures = [GaussMixture(means, covariances, weights)]

    for _ in range(1, num_sources):
        # means move up and right, basis functions become wider and flatter
        means = means + rng.uniform(0.0, MEAN_SHIFT, size=(K, 2))
        covariances = covariances + np.array(
            [np.diag(d) for d in rng.uniform(0.0, COVARIANCE_INFLATION, size=(K, 2))]
        )
        weights = weights + rng.normal(0.0, WEIGHT_NOISE_RELATIVE * np.abs(weights) + WEIGHT_NOISE_ABSOLUTE)
        mixtures.append(GaussMixture(means, covariances, weights))

    return GaussMixtureSources(tuple(mixtures))


def gauss_mixture_eval(sources: GaussMixtureSources, l: int, x) -> float:
    if not 1 <= l <= len(sources):
        raise ValueError(f"no source {l} among {len(sources)}")

    return float(sources.mixtures[l - 1](as_points(x, 2))[0])


def mixture_mean(mixture: GaussMixture, measure: IntegrationMeasure, nodes: int, chunk_size: int = 65536) -> float:
    points, weights = gauss_legendre_grid(measure, nodes)

    total = 0.0
    for start in range(0, len(points), chunk_size):
        stop = start + chunk_size
        total += float(weights[start:stop] @ mixture(points[start:stop]))

    return total


@functools.lru_cache(maxsize=None)
def _source_mean(seed: int, l: int, nodes: int) -> float:
    sources = gauss_mixture_generate(seed)
    return mixture_mean(sources.mixtures[l - 1], IntegrationMeasure.box(*BOUNDS), nodes)


class GaussMixtureBenchmark(AbstractBenchmark):
    """
    Primary cost 1, both secondary sources cost 5% of it. The instance is fixed by ``instance_seed`` and does not
    change with the run seed.
    """

    @staticmethod
    def benchmark_id() -> str:
        return "gauss2d"

    def __init__(self, instance_seed: int = 0):
        super().__init__()

        self.instance_seed = instance_seed
        self.mixture_sources = gauss_mixture_generate(instance_seed)

        self._measure = IntegrationMeasure.box(*BOUNDS)
        self._cost_model = CostModel.constant(COSTS)

    @property
    def num_sources(self) -> int:
        return NUM_SOURCES

    @property
    def measure(self) -> IntegrationMeasure:
        return self._measure

    @property
    def cost_model(self) -> CostModel:
        return self._cost_model

    def _evaluate(self, l: int, x: np.ndarray) -> float:
        return gauss_mixture_eval(self.mixture_sources, l, x)

    def _compute_ground_truth(self) -> float:
        return _source_mean(self.instance_seed, 1, GROUND_TRUTH_NODES)

    def source_integral(self, l: int, nodes: int = GROUND_TRUTH_NODES) -> float:
        return _source_mean(self.instance_seed, l, nodes)

    def initial_locations(self, rng: np.random.Generator) -> dict[str, list[tuple[int, np.ndarray]]]:
        points = self.measure.sample(rng, 3)

        # one primary and two evaluations of each secondary source, one of them at the primary location
        return {
            "amsbq": [(1, points[0]), (2, points[0]), (2, points[1]), (3, points[0]), (3, points[2])],
            "vbq": [(1, x) for x in points],
        }
