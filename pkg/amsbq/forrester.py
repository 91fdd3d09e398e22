"""
Two-source Forrester benchmarks on [0, 1] with location-dependent logistic query costs.

The classic variant uses the standard Forrester pair, the wiggly variant adds a short-lengthscale sinusoid and gives
the secondary cost an interior minimum.
"""

from dataclasses import dataclass

import numpy as np
import scipy.integrate
from scipy.special import expit

from .abstractbenchmark import AbstractBenchmark
from .acquisition import CostModel
from .kernels import IntegrationMeasure, as_points
from .logging import get_logger

logger = get_logger("forrester")

VARIANTS = ("classic", "wiggly")


def forrester_eval(variant: str, l: int, x) -> float:
    if variant not in VARIANTS:
        raise ValueError(f"unknown Forrester variant {variant}")

    if l not in (1, 2):
        raise ValueError(f"the Forrester pair has no source {l}")

    x = float(np.asarray(x, dtype=float).ravel()[0])

    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x = {x} lies outside of [0, 1]")

    f1 = (6 * x - 2) ** 2 * np.sin(12 * x - 4)

    if variant == "classic":
        if l == 1:
            return float(f1)
        return float(0.5 * f1 + 10 * x)

    f1 -= (2 - x) ** 2 * np.sin(36 * x)

    if l == 1:
        return float(f1)
    return float(0.75 * f1 + 16 * (x - 0.5) + 10)


@dataclass(frozen=True)
class LogisticCost:
    """
    offset + sum_i scale_i * sigmoid(steepness_i * (x - shift_i)), divided by its maximum on [0, 1] and clipped to 1.
    """

    offset: float
    terms: tuple[tuple[float, float, float], ...]
    grid_size: int = 10001

    def raw(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        rv = np.full(x.shape, self.offset)

        for scale, steepness, shift in self.terms:
            rv = rv + scale * expit(steepness * (x - shift))

        return rv

    @property
    def normalization(self) -> float:
        return float(np.max(self.raw(np.linspace(0.0, 1.0, self.grid_size))))

    @property
    def minimum(self) -> float:
        return float(np.min(self.raw(np.linspace(0.0, 1.0, self.grid_size)))) / self.normalization

    def __call__(self, X) -> np.ndarray:
        x = as_points(X)[:, 0]
        return np.minimum(self.raw(x) / self.normalization, 1.0)


COSTS = {
    "classic": (
        LogisticCost(0.9, ((0.1, -10.0, 0.5),)),
        LogisticCost(0.005, ((0.995, -30.0, 0.25),)),
    ),
    "wiggly": (
        LogisticCost(0.9, ((0.1, -10.0, 0.5),)),
        LogisticCost(0.01, ((0.99, -20.0, 0.3), (0.4, 20.0, 0.85))),
    ),
}


class ForresterBenchmark(AbstractBenchmark):
    variant: str = None

    @staticmethod
    def benchmark_id() -> str:
        raise NotImplementedError

    def __init__(self):
        super().__init__()

        self._measure = IntegrationMeasure.box((0.0, 1.0))

        costs = COSTS[self.variant]
        # half the sampled minimum keeps delta a strict lower bound between grid nodes
        delta = 0.5 * min(c.minimum for c in costs)
        self._cost_model = CostModel(list(costs), delta)

    @property
    def num_sources(self) -> int:
        return 2

    @property
    def measure(self) -> IntegrationMeasure:
        return self._measure

    @property
    def cost_model(self) -> CostModel:
        return self._cost_model

    def _evaluate(self, l: int, x: np.ndarray) -> float:
        return forrester_eval(self.variant, l, x)

    def _integrate(self, l: int) -> float:
        value, error = scipy.integrate.quad(
            lambda x: forrester_eval(self.variant, l, x), 0.0, 1.0, epsabs=1e-13, epsrel=1e-13, limit=200
        )
        logger.debug(f"<f_{l}> = {value:.15g} (estimated error {error:.2g})")
        return value

    def _compute_ground_truth(self) -> float:
        return self._integrate(1)

    def source_integral(self, l: int, nodes: int = 64) -> float:
        if l not in self._source_integrals:
            self._source_integrals[l] = self._integrate(l)

        return self._source_integrals[l]


class ClassicForrester(ForresterBenchmark):
    """
    f_1(x) = (6x - 2)^2 sin(12x - 4), f_2(x) = f_1(x) / 2 + 10x.

    Costs coincide near x = 0 and the secondary source is two orders of magnitude cheaper for large x. The model
    assumes a fixed noise variance of 1e-2 on both sources.
    """

    variant = "classic"

    @staticmethod
    def benchmark_id() -> str:
        return "forrester-classic"

    @property
    def noise(self) -> np.ndarray:
        return np.full(2, 1e-2)

    def initial_locations(self, rng: np.random.Generator) -> dict[str, list[tuple[int, np.ndarray]]]:
        primary = rng.random((3, 1))
        secondary = rng.random((5, 1))

        return {
            "amsbq": [(1, x) for x in primary] + [(2, x) for x in secondary],
            "vbq": [(1, x) for x in primary],
        }


class WigglyForrester(ForresterBenchmark):
    """
    f_1(x) = (6x - 2)^2 sin(12x - 4) - (2 - x)^2 sin(36x), f_2(x) = 3/4 f_1(x) + 16(x - 1/2) + 10, noise-free.
    """

    variant = "wiggly"

    @staticmethod
    def benchmark_id() -> str:
        return "forrester-wiggly"

    def initial_locations(self, rng: np.random.Generator) -> dict[str, list[tuple[int, np.ndarray]]]:
        points = rng.random((3, 1))

        # the secondary datum at the primary location lets empirical Bayes see the correlation between the sources
        return {
            "amsbq": [(1, points[0]), (2, points[0]), (2, points[1])],
            "vbq": [(1, x) for x in points],
        }
