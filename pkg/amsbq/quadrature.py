"""
Gaussian belief over the integral Z of the primary source and the squared correlation rho^2 between Z and a batch of
yet unobserved observations, which all acquisition rates are built on.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky

from .kernels import IntegrationMeasure, as_points, initial_error, kernel_mean_vector
from .logging import get_logger
from .msgp import GpState, IllConditionedModelError, cholesky_with_jitter, posterior_cross_cov

logger = get_logger("quadrature")

VARIANCE_FLOOR = 1e-14

# rho^2 values this far outside of [0, 1] are bugs rather than round-off
RHO2_TOLERANCE = 1e-6

# below this fraction of the initial error the integral variance is dominated by cancellation and rho^2 is only clipped
ROUNDOFF_VARIANCE_FRACTION = 1e-8


class DegenerateCandidateError(ValueError):
    pass


class DiagnosticsError(ArithmeticError):
    pass


@dataclass(frozen=True)
class IntegralPosterior:
    mean: float
    variance: float

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))

    def relative_error(self, truth: float) -> float:
        return (self.mean - truth) / truth


@dataclass(frozen=True)
class CandidateBatch:
    sources: np.ndarray
    locations: np.ndarray

    def __post_init__(self):
        locations = as_points(self.locations)
        sources = np.broadcast_to(np.asarray(self.sources, dtype=int), (locations.shape[0],)).copy()

        if locations.shape[0] < 1:
            raise ValueError("a candidate batch needs at least one point")

        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "locations", locations)

    @classmethod
    def single(cls, l: int, x) -> "CandidateBatch":
        return cls(np.array([l]), np.atleast_1d(np.asarray(x, dtype=float))[None, :])

    def __len__(self) -> int:
        return self.locations.shape[0]


def _integral_weights(state: GpState, measure: IntegrationMeasure) -> np.ndarray:
    """
    L^-1 <k_{1 l}(., X)>, the whitened kernel mean of the data.
    """
    z = kernel_mean_vector(1, state.data.sources, state.data.X, state.kernel, measure)
    return state.whiten(z[:, None])[:, 0]


def integral_posterior(state: GpState, measure: IntegrationMeasure) -> IntegralPosterior:
    state.require_factorized()

    prior_mean = float(state.prior_mean[0])
    prior_variance = initial_error(state.kernel, measure)

    if len(state.data) == 0:
        return IntegralPosterior(prior_mean, max(prior_variance, VARIANCE_FLOOR))

    z = kernel_mean_vector(1, state.data.sources, state.data.X, state.kernel, measure)
    mean = prior_mean + float(z @ state.alpha)

    w = _integral_weights(state, measure)
    variance = prior_variance - float(w @ w)

    return IntegralPosterior(mean, max(variance, VARIANCE_FLOOR))


def _check_rho2(rho2: np.ndarray, strict: bool = True) -> np.ndarray:
    bad = (rho2 < -RHO2_TOLERANCE) | (rho2 > 1.0 + RHO2_TOLERANCE) | ~np.isfinite(rho2)

    if strict and np.any(bad):
        raise DiagnosticsError(f"squared correlation outside of [0, 1]: {rho2[bad]}")

    return np.clip(np.nan_to_num(rho2, nan=0.0, posinf=1.0, neginf=0.0), 0.0, 1.0)


def _resolved(state: GpState, measure: IntegrationMeasure, Z: IntegralPosterior) -> bool:
    return Z.variance > ROUNDOFF_VARIANCE_FRACTION * initial_error(state.kernel, measure)


def _integral_covariance(state: GpState, measure: IntegrationMeasure, sources, X) -> np.ndarray:
    """
    Cov(Z, f_sources(X) | D) for many (source, location) pairs.
    """
    prior = kernel_mean_vector(1, sources, X, state.kernel, measure)

    if len(state.data) == 0:
        return prior

    w = _integral_weights(state, measure)
    v = state.whiten(state.cross_kernel(sources, X))
    return prior - w @ v


def candidate_covariance(state: GpState, cand: CandidateBatch) -> np.ndarray:
    """
    Noise-corrected posterior covariance of the candidate observations. The Gram matrix jitter of the state is
    included, so that the value equals what conditioning on the candidate would add to the Gram matrix.
    """
    V = posterior_cross_cov(state, cand.sources, cand.locations, cand.sources, cand.locations)
    V[np.diag_indices_from(V)] += state.hyper.noise[cand.sources - 1] + state.jitter
    return 0.5 * (V + V.T)


def rho_squared(
    state: GpState,
    cand: CandidateBatch,
    measure: IntegrationMeasure,
    Z: IntegralPosterior = None,
) -> float:
    """
    Fraction of the current integral variance that observing the candidate batch explains.
    """
    if Z is None:
        Z = integral_posterior(state, measure)

    c = _integral_covariance(state, measure, cand.sources, cand.locations)
    V = candidate_covariance(state, cand)

    prior_scale = float(np.mean(np.diag(state.kernel.B)[cand.sources - 1]))

    try:
        chol = cholesky(V, lower=True)
    except (LinAlgError, ValueError):
        try:
            chol, _ = cholesky_with_jitter(V, scale=prior_scale)
        except IllConditionedModelError as e:
            raise DegenerateCandidateError(f"covariance of candidate batch {cand} is singular") from e

    explained = float(c @ cho_solve((chol, True), c))
    rho2 = np.array([explained / max(Z.variance, VARIANCE_FLOOR)])
    return float(_check_rho2(rho2, _resolved(state, measure, Z))[0])


def myopic_rho_squared(
    state: GpState,
    l: int,
    X,
    measure: IntegrationMeasure,
    Z: IntegralPosterior = None,
) -> np.ndarray:
    """
    rho^2 of many single-point candidates of source l at once, i.e. the squared correlation between Z and y_l(x).
    """
    X = as_points(X, measure.dim)

    if Z is None:
        Z = integral_posterior(state, measure)

    index = state.kernel.source_index(l)
    c = _integral_covariance(state, measure, l, X)

    if len(state.data):
        v = state.whiten(state.cross_kernel(l, X))
        f_var = state.kernel.B[index, index] - np.sum(v**2, axis=0)
    else:
        f_var = np.full(X.shape[0], state.kernel.B[index, index])

    var = np.maximum(f_var, 0.0) + state.hyper.noise[index] + state.jitter

    # a candidate without any remaining variance cannot explain anything
    with np.errstate(divide="ignore", invalid="ignore"):
        rho2 = np.where(var > 0, c**2 / (var * max(Z.variance, VARIANCE_FLOOR)), 0.0)

    return _check_rho2(rho2, _resolved(state, measure, Z))


def variance_reduction(
    state: GpState,
    cand: CandidateBatch,
    measure: IntegrationMeasure,
    Z: IntegralPosterior = None,
) -> float:
    if Z is None:
        Z = integral_posterior(state, measure)

    return rho_squared(state, cand, measure, Z) * Z.variance
