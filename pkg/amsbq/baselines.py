"""
Single-source reference methods: vanilla BQ on the primary source and the percentile estimator.
"""

import itertools
from typing import Callable

import numpy as np

from .acquisition import CostModel, LoopConfig, LoopRecord, run_loop
from .kernels import IntegrationMeasure
from .logging import get_logger
from .msgp import Dataset, PriorSpec

logger = get_logger("baselines")


def percentile_nodes(measure: IntegrationMeasure, n: int) -> np.ndarray:
    """
    Right ends of n equal-mass intervals per dimension. For D > 1 the nodes form a tensor grid with n^D points.
    """
    if n < 1:
        raise ValueError("at least one node is needed")

    axes = [low + np.arange(1, n + 1) * (high - low) / n for low, high in measure.bounds]
    return np.array(list(itertools.product(*axes)))


def percentile_estimate(f: Callable[[np.ndarray], float], measure: IntegrationMeasure, n: int) -> float:
    """
    Equal-mass node estimator of <f>. Under the uniform measure this is the right Riemann sum
    (1/n) sum_i f(low + i (high - low) / n).
    """
    nodes = percentile_nodes(measure, n)
    return float(np.mean([f(x) for x in nodes]))


def vanilla_bq_baseline(
    f1: Callable[[np.ndarray], float],
    measure: IntegrationMeasure,
    config: LoopConfig,
    initial: Dataset,
    cost: CostModel = None,
    priors: PriorSpec = None,
    on_record: Callable[[LoopRecord], None] = None,
) -> list[LoopRecord]:
    """
    The active loop restricted to the primary source. Selection ignores the cost, which only enters the accounting
    (unit cost unless given). All acquisition kinds induce the same policy here.
    """
    if np.any(initial.sources != 1):
        raise ValueError("vanilla BQ only uses primary source data")

    if cost is None:
        cost = CostModel.constant([1.0])

    if cost.num_sources != 1:
        raise ValueError("vanilla BQ needs the cost model of the primary source only")

    single_source = LoopConfig(
        budget=config.budget,
        acquisition=config.acquisition.without_cost(),
        restarts=config.restarts,
        seed=config.seed,
        refit=config.refit,
        max_iterations=config.max_iterations,
        fit_restarts=config.fit_restarts,
        initial_cost=config.initial_cost,
    )

    return run_loop([f1], measure, cost, single_source, initial, priors, on_record=on_record)
