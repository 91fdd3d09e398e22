from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from .acquisition import CostModel
from .kernels import IntegrationMeasure, as_points
from .logging import get_logger
from .msgp import Dataset
from .util import make_rng

logger = get_logger("benchmark")


def gauss_legendre_grid(measure: IntegrationMeasure, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Tensor Gauss-Legendre rule for the uniform probability measure on the box: (points, weights), weights sum to 1.
    """
    unit_nodes, unit_weights = leggauss(nodes)

    axes = []
    weights = []
    for low, high in measure.bounds:
        axes.append(low + 0.5 * (unit_nodes + 1.0) * (high - low))
        weights.append(0.5 * unit_weights)

    points = np.stack([axis.ravel() for axis in np.meshgrid(*axes, indexing="ij")], axis=1)
    w = np.ones(1)
    for factor in weights:
        w = np.outer(w, factor).ravel()

    return points, w


class AbstractBenchmark:
    """
    Base class for the integration benchmarks.

    A benchmark bundles L black-box sources f_1..f_L on a common box, the cost of querying them, the observation noise
    variances assumed by the model and the ground truth <f_1> of the primary source, computed once with an
    independent high-resolution rule.

    Source evaluations always take a single point of shape (D,). Weighted integrals are expressed by folding the
    weight density into the sources, so the measure exposed here is always the plain uniform one.

    Implementations need to provide benchmark_id, measure, cost_model, _evaluate and _compute_ground_truth.
    """

    @staticmethod
    def benchmark_id() -> str:
        raise NotImplementedError

    def __init__(self):
        self._ground_truth = None
        self._source_integrals = {}

    @property
    def num_sources(self) -> int:
        raise NotImplementedError

    @property
    def measure(self) -> IntegrationMeasure:
        raise NotImplementedError

    @property
    def cost_model(self) -> CostModel:
        raise NotImplementedError

    @property
    def noise(self) -> np.ndarray:
        return np.zeros(self.num_sources)

    def _evaluate(self, l: int, x: np.ndarray) -> float:
        # to be implemented by subclasses
        raise NotImplementedError

    def _compute_ground_truth(self) -> float:
        # to be implemented by subclasses
        raise NotImplementedError

    def evaluate(self, l: int, x) -> float:
        if not 1 <= l <= self.num_sources:
            raise ValueError(f"{self.benchmark_id()} has no source {l}")

        x = as_points(x, self.measure.dim)[0]

        if not self.measure.contains(x):
            raise ValueError(f"{x} lies outside of the domain {self.measure.bounds.tolist()}")

        return float(self._evaluate(l, x))

    def sources(self) -> list[Callable[[np.ndarray], float]]:
        def make(l):
            return lambda x: self.evaluate(l, x)

        return [make(l) for l in range(1, self.num_sources + 1)]

    def ground_truth(self) -> float:
        if self._ground_truth is None:
            logger.debug(f"Computing ground truth of {self.benchmark_id()}")
            self._ground_truth = float(self._compute_ground_truth())
            logger.debug(f"Ground truth of {self.benchmark_id()}: {self._ground_truth:.12g}")

        return self._ground_truth

    def source_integral(self, l: int, nodes: int = 64) -> float:
        """
        <f_l> under the uniform measure. Mainly of interest for secondary sources, whose integral differs from the
        primary one by an unknown bias.
        """
        if l not in self._source_integrals:
            points, weights = gauss_legendre_grid(self.measure, nodes)
            values = np.array([self.evaluate(l, x) for x in points])
            self._source_integrals[l] = float(weights @ values)

        return self._source_integrals[l]

    def initial_locations(self, rng: np.random.Generator) -> dict[str, list[tuple[int, np.ndarray]]]:
        # to be implemented by subclasses
        raise NotImplementedError

    def initial_design(self, method: str, seed: int) -> Dataset:
        """
        Evaluate the initial design of the given method ("amsbq" or "vbq"). Locations are drawn from a dedicated
        stream of the run seed, the same for both methods.
        """
        designs = self.initial_locations(make_rng(seed, "initial-design"))

        try:
            design = designs[method]
        except KeyError:
            raise KeyError(f"no initial design for method {method}")

        data = Dataset(self.measure.dim)
        for l, x in design:
            data.append(l, x, self.evaluate(l, x))

        return data

    def initial_cost(self, data: Dataset) -> float:
        return float(sum(self.cost_model.at(t.l, t.x) for t in data))

    def describe(self) -> dict[str, str]:
        return {
            "id": self.benchmark_id(),
            "sources": str(self.num_sources),
            "domain": " x ".join(f"[{low:g}, {high:g}]" for low, high in self.measure.bounds),
        }
