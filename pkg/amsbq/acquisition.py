"""
Cost models, cost-sensitive acquisition rates and the active multi-source BQ loop.

All rates are functions of the squared correlation rho^2 between the integral and the candidate observation, divided by
the candidate's cost. Mutual information (MI) and integral variance reduction (IVR) vanish at rho^2 = 0. Integral
precision (IP) does not and therefore keeps selecting cheap, uninformative queries; it is only available on request.
"""

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.optimize

from .kernels import IntegrationMeasure, as_points
from .logging import get_logger
from .msgp import Dataset, GpState, Hyperparams, PriorSpec, empirical_bayes_B_prior, fit, output_scale
from .quadrature import CandidateBatch, IntegralPosterior, integral_posterior, myopic_rho_squared
from .util import make_rng, make_seed_sequence

logger = get_logger("acquisition")

# rho^2 at or above this value is a perfect step, MI diverges there
PERFECT_STEP = 1.0 - 1e-12


class FullyExplainedModel(Exception):
    """
    Raised when no candidate has a positive acquisition rate, i.e. nothing is left to learn about the integral.
    """


class PathologicalAcquisitionError(ValueError):
    pass


class SourceQueryError(RuntimeError):
    def __init__(self, message: str, records: list["LoopRecord"]):
        super().__init__(message)
        self.records = records


class AcquisitionKind(enum.Enum):
    MI = "mi"
    IVR = "ivr"
    IP = "ip"
    MI_NO_COST = "mi-no-cost"
    IVR_NO_COST = "ivr-no-cost"

    @classmethod
    def parse(cls, value: "str | AcquisitionKind") -> "AcquisitionKind":
        if isinstance(value, cls):
            return value

        try:
            return cls(value.strip().lower())
        except ValueError:
            choices = ", ".join(kind.value for kind in cls)
            raise ValueError(f"unknown acquisition {value}, expected one of {choices}") from None

    @property
    def pathological(self) -> bool:
        return self is AcquisitionKind.IP

    @property
    def cost_sensitive(self) -> bool:
        return self not in (AcquisitionKind.MI_NO_COST, AcquisitionKind.IVR_NO_COST)

    def without_cost(self) -> "AcquisitionKind":
        # with a single source and no cost, every kind induces the same policy
        if self in (AcquisitionKind.IVR, AcquisitionKind.IVR_NO_COST):
            return AcquisitionKind.IVR_NO_COST

        return AcquisitionKind.MI_NO_COST


def _rate_arguments(rho2, cost) -> tuple[np.ndarray, np.ndarray]:
    rho2 = np.asarray(rho2, dtype=float)
    cost = np.asarray(cost, dtype=float)

    if np.any(cost <= 0):
        raise ValueError("cost must be positive")

    return np.broadcast_arrays(rho2, cost)


def _as_result(value: np.ndarray):
    return float(value) if value.ndim == 0 else value


def rate_mi(rho2, cost):
    """
    -log(1 - rho^2) / cost; the factor 1/2 of the mutual information is dropped. Perfect steps yield +inf.
    """
    rho2, cost = _rate_arguments(rho2, cost)

    rv = np.full(rho2.shape, np.inf)
    finite = rho2 < PERFECT_STEP
    rv[finite] = -np.log1p(-rho2[finite]) / cost[finite]

    return _as_result(rv)


def rate_ivr(rho2, cost):
    rho2, cost = _rate_arguments(rho2, cost)
    return _as_result(rho2 / cost)


def rate_ip(rho2, cost, variance: float = None):
    """
    (1 - rho^2)^-1 / cost, the gain in integral precision per unit cost when the current V[Z|D] is passed as
    ``variance``. Without it the constant factor 1 / V[Z|D] is omitted, which does not change the argmax.
    """
    rho2, cost = _rate_arguments(rho2, cost)

    if variance is not None and not variance > 0:
        raise ValueError(f"integral variance must be positive, got {variance}")

    rv = np.full(rho2.shape, np.inf)
    finite = rho2 < PERFECT_STEP
    rv[finite] = 1.0 / ((1.0 - rho2[finite]) * cost[finite])

    if variance is not None:
        rv /= variance

    return _as_result(rv)


RATES = {
    AcquisitionKind.MI: rate_mi,
    AcquisitionKind.IVR: rate_ivr,
    AcquisitionKind.IP: rate_ip,
    AcquisitionKind.MI_NO_COST: rate_mi,
    AcquisitionKind.IVR_NO_COST: rate_ivr,
}


def rate(kind: AcquisitionKind, rho2, cost):
    if not kind.cost_sensitive:
        cost = np.ones_like(np.asarray(cost, dtype=float))

    return RATES[kind](rho2, cost)


@dataclass(eq=False)
class CostModel:
    """
    Per-source cost functions c_l mapping an (n, D) array of locations to n costs in [delta, 1].
    """

    functions: Sequence[Callable[[np.ndarray], np.ndarray]]
    delta: float

    def __post_init__(self):
        if not 0 < self.delta <= 1:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")

    @classmethod
    def constant(cls, costs: Sequence[float]) -> "CostModel":
        def make(value):
            return lambda X: np.full(as_points(X).shape[0], float(value))

        return cls([make(c) for c in costs], min(costs))

    @property
    def num_sources(self) -> int:
        return len(self.functions)

    def __call__(self, l: int, X) -> np.ndarray:
        if not 1 <= l <= self.num_sources:
            raise ValueError(f"source index out of range 1..{self.num_sources}: {l}")

        points = as_points(X)
        return np.broadcast_to(np.asarray(self.functions[l - 1](points), dtype=float), (points.shape[0],))

    def at(self, l: int, x) -> float:
        return float(self(l, np.atleast_1d(np.asarray(x, dtype=float))[None, :])[0])

    def batch_cost(self, cand: CandidateBatch) -> float:
        return float(sum(self.at(l, x) for l, x in zip(cand.sources, cand.locations)))

    def restricted(self, sources: Sequence[int]) -> "CostModel":
        return CostModel([self.functions[l - 1] for l in sources], self.delta)

    def check(self, measure: IntegrationMeasure, rng: np.random.Generator, n: int = 1000):
        X = measure.sample(rng, n)

        for l in range(1, self.num_sources + 1):
            values = self(l, X)

            if np.any(values < self.delta) or np.any(values > 1):
                raise ValueError(f"cost of source {l} leaves [{self.delta}, 1]")


@dataclass(frozen=True)
class MyopicChoice:
    source: int
    x: np.ndarray
    value: float
    rho2: float
    cost: float


@dataclass
class LoopConfig:
    budget: float
    acquisition: AcquisitionKind = AcquisitionKind.MI
    restarts: int = 10
    seed: int = 0
    refit: bool = True
    max_iterations: int = None
    fit_restarts: int = 5
    allow_pathological: bool = False
    # cost of the initial design, charged before the first query
    initial_cost: float = 0.0

    def __post_init__(self):
        self.acquisition = AcquisitionKind.parse(self.acquisition)

        if not np.isfinite(self.budget) or self.budget < 0:
            raise ValueError(f"budget must be a non-negative number, got {self.budget}")

        if self.initial_cost > 0 and self.budget <= self.initial_cost:
            raise ValueError(f"budget {self.budget} does not exceed the initial cost {self.initial_cost}")

        if self.restarts < 1:
            raise ValueError("at least one restart per source is needed")


@dataclass
class LoopRecord:
    iteration: int
    source: int
    x: np.ndarray
    y: float
    cost: float
    cum_cost: float
    ez: float
    vz: float
    acq_value: float
    hyper: dict[str, float] = field(default_factory=dict)
    fit_converged: bool = True


def starting_points(measure: IntegrationMeasure, restarts: int, rng: np.random.Generator) -> np.ndarray:
    """
    Lower and upper corner of the box followed by uniform random points, ``restarts`` points in total.
    """
    corners = [measure.lower, measure.upper][:restarts]
    random = measure.sample(rng, max(restarts - len(corners), 0))
    return np.vstack(corners + [random])


def _select(candidates: list[MyopicChoice]) -> MyopicChoice:
    # highest rate first, ties toward lower cost, then lower source index
    return min(candidates, key=lambda c: (-c.value, c.cost, c.source))


def maximize_rate(
    rho2_fn: Callable[[np.ndarray], np.ndarray],
    cost_fn: Callable[[np.ndarray], np.ndarray],
    kind: AcquisitionKind,
    measure: IntegrationMeasure,
    starts: np.ndarray,
    source: int = 1,
) -> MyopicChoice:
    """
    Multi-start bounded quasi-Newton maximization of a rate built from rho2_fn and cost_fn over the box of measure.

    Both functions map an (n, D) array to n values.
    """
    bounds = list(zip(measure.lower, measure.upper))

    def negative_rate(x):
        point = x[None, :]
        # clipping keeps the objective finite at perfect steps
        rho2 = min(float(rho2_fn(point)[0]), PERFECT_STEP - 1e-15)
        return -float(rate(kind, rho2, cost_fn(point)[0]))

    points = [starts]

    for start in starts:
        result = scipy.optimize.minimize(
            negative_rate, start, method="L-BFGS-B", bounds=bounds, options=dict(ftol=1e-15, gtol=1e-12)
        )
        points.append(np.clip(result.x, measure.lower, measure.upper)[None, :])

    points = np.vstack(points)
    rho2 = np.asarray(rho2_fn(points), dtype=float)
    cost = np.asarray(cost_fn(points), dtype=float)
    values = np.asarray(rate(kind, rho2, cost), dtype=float)

    candidates = [
        MyopicChoice(source, points[i], float(values[i]), float(rho2[i]), float(cost[i]))
        for i in range(points.shape[0])
    ]
    return _select(candidates)


def optimize_myopic(
    state: GpState,
    measure: IntegrationMeasure,
    cost: CostModel,
    kind: AcquisitionKind,
    restarts: int = 10,
    seed: int | np.random.SeedSequence = 0,
    Z: IntegralPosterior = None,
) -> MyopicChoice:
    """
    Best (source, location) pair for a single next query. Every source is optimized from the same starting points.

    :raises FullyExplainedModel: if no candidate has a positive rate
    """
    if Z is None:
        Z = integral_posterior(state, measure)

    starts = starting_points(measure, restarts, make_rng(seed, "starts"))

    per_source = []

    for l in range(1, state.num_sources + 1):

        def rho2_fn(X, l=l):
            return myopic_rho_squared(state, l, X, measure, Z)

        def cost_fn(X, l=l):
            return cost(l, X)

        choice = maximize_rate(rho2_fn, cost_fn, kind, measure, starts, source=l)
        logger.debug(f"source {l}: best rate {choice.value:.6g} at {choice.x} (rho^2 {choice.rho2:.6g})")
        per_source.append(choice)

    best = _select(per_source)

    if not best.value > 0:
        raise FullyExplainedModel("no query has a positive acquisition rate")

    return best


def run_loop(
    sources: Sequence[Callable[[np.ndarray], float]],
    measure: IntegrationMeasure,
    cost: CostModel,
    config: LoopConfig,
    initial: Dataset,
    priors: PriorSpec = None,
    hyper: Hyperparams = None,
    on_record: Callable[[LoopRecord], None] = None,
) -> list[LoopRecord]:
    """
    Sequentially select, query and condition on (source, location) pairs until the budget is spent.

    ``sources`` are the black-box evaluators f_1..f_L, each taking a single point of shape (D,). The initial data is
    charged only through ``config.initial_cost``. A query is accepted as long as the budget has not been exhausted
    before it, so the final cumulative cost may exceed the budget by at most the cost of the last query.

    ``on_record`` is called with every record as soon as it exists, e.g. to keep a partial log if the model fails.

    :raises SourceQueryError: if a black box fails; the records gathered so far are attached to the exception
    """
    if config.acquisition.pathological and not config.allow_pathological:
        raise PathologicalAcquisitionError(f"{config.acquisition.value} is pathological and needs an explicit opt-in")

    if len(initial) == 0:
        raise ValueError("the loop needs at least one initial observation")

    if cost.num_sources != len(sources):
        raise ValueError(f"{len(sources)} sources but {cost.num_sources} cost functions")

    data = initial.copy()

    if priors is None:
        priors = PriorSpec.weakly_informative(len(sources), float(np.mean(measure.widths)), output_scale(data))
        priors = empirical_bayes_B_prior(data, priors, config.fit_restarts, seed=config.seed)

    if hyper is None:
        hyper = priors.center()

        if config.refit:
            hyper = fit(data, priors, config.fit_restarts, seed=make_seed_sequence(config.seed, "fit", 0))

    state = GpState(hyper, data)

    records: list[LoopRecord] = []
    cum_cost = config.initial_cost
    iteration = 0

    while cum_cost < config.budget:
        if config.max_iterations is not None and iteration >= config.max_iterations:
            logger.info(f"Reached maximum number of iterations {config.max_iterations}")
            break

        try:
            choice = optimize_myopic(
                state,
                measure,
                cost,
                config.acquisition,
                config.restarts,
                seed=make_seed_sequence(config.seed, "acquisition", iteration),
            )
        except FullyExplainedModel:
            logger.info("Model explains the integral completely, stopping")
            break

        try:
            y = float(sources[choice.source - 1](choice.x))
        except Exception as e:
            logger.error(f"Query of source {choice.source} at {choice.x} failed: {e}")
            raise SourceQueryError(f"query of source {choice.source} at {choice.x} failed", records) from e

        query_cost = cost.at(choice.source, choice.x)
        cum_cost += query_cost

        state.append(choice.source, choice.x, y)

        if config.refit:
            hyper = fit(
                state.data,
                priors,
                config.fit_restarts,
                seed=make_seed_sequence(config.seed, "fit", iteration + 1),
                initial=state.hyper,
            )
            state = state.with_hyper(hyper)

        Z = integral_posterior(state, measure)

        records.append(
            LoopRecord(
                iteration=iteration,
                source=choice.source,
                x=np.array(choice.x),
                y=y,
                cost=query_cost,
                cum_cost=cum_cost,
                ez=Z.mean,
                vz=Z.variance,
                acq_value=choice.value,
                hyper=state.hyper.snapshot(),
                fit_converged=state.hyper.converged,
            )
        )

        if on_record is not None:
            on_record(records[-1])

        logger.info(
            f"iteration {iteration}: source {choice.source} at {np.array2string(choice.x, precision=4)}, "
            f"cost {query_cost:.4g} (total {cum_cost:.4g}), E[Z] = {Z.mean:.6g}, V[Z] = {Z.variance:.3g}"
        )

        iteration += 1

    return records
