"""
Shared fixtures and independent reference implementations (oracles) for the test suite.

The oracles deliberately avoid the code paths under test: kernel integrals are computed by brute-force tensor
quadrature, posteriors by the projection formulation over the full multi-output Gram matrix.
"""

import numpy as np
import pytest
from numpy.polynomial.legendre import leggauss

from amsbq.kernels import IntegrationMeasure
from amsbq.msgp import Dataset, GpState, Hyperparams


def random_hyper(rng: np.random.Generator, num_sources: int, lengthscale: float = None, noise=0.0) -> Hyperparams:
    if lengthscale is None:
        lengthscale = rng.uniform(0.1, 0.6)

    W = rng.normal(0.0, 1.0, size=(num_sources, num_sources))
    eta = rng.uniform(0.05, 0.5, size=num_sources)
    return Hyperparams(lengthscale, W, eta, noise)


def random_dataset(rng: np.random.Generator, num_sources: int, n: int, measure: IntegrationMeasure) -> Dataset:
    sources = rng.integers(1, num_sources + 1, size=n)
    X = measure.sample(rng, n)
    y = rng.normal(size=n)
    return Dataset.from_arrays(sources, X, y)


def random_state(rng: np.random.Generator, num_sources: int, n: int, measure: IntegrationMeasure, noise=0.0):
    hyper = random_hyper(rng, num_sources, noise=noise)
    data = random_dataset(rng, num_sources, n, measure)
    return GpState(hyper, data)


def random_box(rng: np.random.Generator, dim: int) -> IntegrationMeasure:
    low = rng.uniform(-2.0, 1.0, size=dim)
    width = rng.uniform(0.3, 2.0, size=dim)
    return IntegrationMeasure(np.stack([low, low + width], axis=1))


def tensor_rule(measure: IntegrationMeasure, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Gauss-Legendre tensor rule normalized to the uniform probability measure on the box.
    """
    unit_nodes, unit_weights = leggauss(nodes)
    grids = [low + 0.5 * (unit_nodes + 1.0) * (high - low) for low, high in measure.bounds]
    points = np.array(np.meshgrid(*grids, indexing="ij")).reshape(measure.dim, -1).T
    weights = np.ones(1)
    for _ in range(measure.dim):
        weights = np.outer(weights, 0.5 * unit_weights).ravel()
    return points, weights


def rbf(x1: np.ndarray, x2: np.ndarray, lengthscale: float) -> np.ndarray:
    sq = np.sum((x1[:, None, :] - x2[None, :, :]) ** 2, axis=-1)
    return np.exp(-0.5 * sq / lengthscale**2)


def brute_force_kernel_mean(x: np.ndarray, lengthscale: float, measure: IntegrationMeasure, nodes: int = 200):
    points, weights = tensor_rule(measure, nodes)
    return rbf(np.atleast_2d(x), points, lengthscale) @ weights


def brute_force_initial_error(lengthscale: float, measure: IntegrationMeasure, nodes: int = 200) -> float:
    # the double integral factorizes over dimensions
    rv = 1.0
    for low, high in measure.bounds:
        points, weights = tensor_rule(IntegrationMeasure(np.array([[low, high]])), nodes)
        rv *= float(weights @ rbf(points, points, lengthscale) @ weights)
    return rv


def projection_posterior(state: GpState, l: int, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Posterior of f_l at X from the full vector-valued GP over all sources at all data locations; each observation is
    the projection of f(x) onto one source.
    """
    B = state.hyper.B
    L = B.shape[0]
    data = state.data
    lengthscale = state.hyper.lengthscale

    # full Gram over (location, source) pairs, ordered location-major
    K_full = np.kron(rbf(data.X, data.X, lengthscale), B)
    P = np.zeros((len(data), len(data) * L))
    for n, source in enumerate(data.sources):
        P[n, n * L + source - 1] = 1.0

    G = P @ K_full @ P.T + np.diag(state.hyper.noise[data.sources - 1]) + state.jitter * np.eye(len(data))

    e = np.zeros(L)
    e[l - 1] = 1.0
    K_star = np.kron(rbf(X, data.X, lengthscale), (e @ B)[None, :]) @ P.T

    mean = K_star @ np.linalg.solve(G, data.y)
    var = B[l - 1, l - 1] - np.sum(K_star * np.linalg.solve(G, K_star.T).T, axis=1)
    return mean, var


def scalar_gp_posterior(X, y, X_star, variance: float, lengthscale: float, noise: float):
    """
    Textbook single-output GP regression with kernel variance * rbf and homoscedastic noise.
    """
    K = variance * rbf(X, X, lengthscale) + noise * np.eye(len(X))
    k = variance * rbf(X, X_star, lengthscale)

    mean = k.T @ np.linalg.solve(K, y)
    var = variance - np.sum(k * np.linalg.solve(K, k), axis=0)
    return mean, var


@pytest.fixture
def rng():
    return np.random.default_rng(20240521)


@pytest.fixture
def unit_interval():
    return IntegrationMeasure.box((0.0, 1.0))


@pytest.fixture
def unit_square():
    return IntegrationMeasure.box((0.0, 1.0), (0.0, 1.0))
