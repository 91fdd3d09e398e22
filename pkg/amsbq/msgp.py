"""
Multi-source Gaussian process inference with an ICM kernel.

Observations come as (source, location, value) triplets; only one source is observed per triplet. The posterior is the
standard GP posterior with the Gram matrix G = K_{ll}(X, X) + Sigma_l, factorized once and extended by rank-1 updates
when new observations are appended.
"""

import dataclasses
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np
import scipy.optimize
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.stats import gamma, norm

from .kernels import IcmKernel, RbfKernel, as_points
from .logging import get_logger
from .util import make_rng

logger = get_logger("msgp")

# jitter is relative to the mean of the diagonal and escalated by a factor of 10 per failed attempt
JITTER_EXPONENTS = range(-10, -3)

# objective value handed to the optimizer for invalid parameters, L-BFGS-B cannot deal with infinities
INVALID_OBJECTIVE = 1e25


class IllConditionedModelError(ValueError):
    pass


class UnfactorizedStateError(RuntimeError):
    pass


def cholesky_with_jitter(matrix: np.ndarray, scale: float = None) -> tuple[np.ndarray, float]:
    """
    Lower Cholesky factor of ``matrix + jitter * I``, escalating the jitter until the factorization succeeds.

    :returns: (factor, jitter actually added)
    :raises IllConditionedModelError: if even the largest jitter does not help
    """
    n = matrix.shape[0]

    if scale is None:
        scale = float(np.mean(np.diag(matrix))) if n else 1.0

    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0

    identity = np.eye(n)

    for exponent in JITTER_EXPONENTS:
        jitter = 10.0**exponent * scale

        try:
            chol = cholesky(matrix + jitter * identity, lower=True)
        except (LinAlgError, ValueError):
            logger.debug(f"Cholesky factorization failed with jitter {jitter:.3g}, escalating")
            continue

        if exponent > JITTER_EXPONENTS[0]:
            logger.debug(f"Cholesky factorization needed escalated jitter {jitter:.3g}")

        return chol, jitter

    raise IllConditionedModelError(f"matrix of size {n} is not positive definite even with maximal jitter")


@dataclass(frozen=True)
class ObservationTriplet:
    l: int
    x: np.ndarray
    y: float


class Dataset:
    """
    Ordered, append-only collection of observation triplets of a common input dimension.
    """

    def __init__(self, dim: int, triplets: Iterable[ObservationTriplet] = ()):
        if dim < 1:
            raise ValueError(f"dimension must be positive, got {dim}")

        self.dim = dim
        self._triplets: list[ObservationTriplet] = []

        for triplet in triplets:
            self.append(triplet.l, triplet.x, triplet.y)

    @classmethod
    def from_arrays(cls, sources, X, y) -> "Dataset":
        sources = np.atleast_1d(sources)
        y = np.atleast_1d(y)
        X = np.asarray(X, dtype=float)

        if X.ndim == 1:
            X = X.reshape(len(sources), -1)

        dataset = cls(X.shape[1])

        for l, x, value in zip(sources, X, y):
            dataset.append(l, x, value)

        return dataset

    def append(self, l: int, x, y: float) -> ObservationTriplet:
        x = as_points(x, self.dim)[0].copy()
        x.setflags(write=False)

        if int(l) != l or l < 1:
            raise ValueError(f"source index must be a positive integer, got {l}")

        triplet = ObservationTriplet(int(l), x, float(y))
        self._triplets.append(triplet)
        return triplet

    def copy(self) -> "Dataset":
        return Dataset(self.dim, self._triplets)

    def __len__(self) -> int:
        return len(self._triplets)

    def __iter__(self) -> Iterator[ObservationTriplet]:
        return iter(self._triplets)

    def __getitem__(self, item: int) -> ObservationTriplet:
        return self._triplets[item]

    @property
    def sources(self) -> np.ndarray:
        return np.array([t.l for t in self._triplets], dtype=int)

    @property
    def X(self) -> np.ndarray:
        if not self._triplets:
            return np.zeros((0, self.dim))

        return np.vstack([t.x for t in self._triplets])

    @property
    def y(self) -> np.ndarray:
        return np.array([t.y for t in self._triplets], dtype=float)

    def count(self, source: int) -> int:
        return sum(1 for t in self._triplets if t.l == source)


@dataclass(eq=False)
class Hyperparams:
    lengthscale: float
    W: np.ndarray
    eta: np.ndarray
    noise: np.ndarray
    # False if the fit that produced these values failed and fell back to earlier ones
    converged: bool = True

    def __post_init__(self):
        self.lengthscale = float(self.lengthscale)
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        self.eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        self.noise = np.broadcast_to(np.asarray(self.noise, dtype=float), self.eta.shape).copy()

        if self.lengthscale <= 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")

        if self.W.shape[0] != self.eta.shape[0]:
            raise ValueError("W and eta disagree on the number of sources")

        if np.any(self.noise < 0):
            raise ValueError("noise variances must be non-negative")

    @classmethod
    def default(
        cls, num_sources: int, lengthscale: float, output_scale: float = 1.0, noise=0.0, rank: int = None
    ) -> "Hyperparams":
        # B = output_scale^2 * I, split evenly between the low-rank and the diagonal part
        rank = num_sources if rank is None else rank
        W = np.eye(num_sources, rank) * output_scale * np.sqrt(0.5)
        eta = np.full(num_sources, 0.5 * output_scale**2)
        return cls(lengthscale, W, eta, noise)

    @property
    def num_sources(self) -> int:
        return self.eta.shape[0]

    @property
    def rank(self) -> int:
        return self.W.shape[1]

    @property
    def B(self) -> np.ndarray:
        return self.kernel().B

    def kernel(self) -> IcmKernel:
        return IcmKernel(RbfKernel(self.lengthscale), self.W, self.eta)

    def replace(self, **changes) -> "Hyperparams":
        return dataclasses.replace(self, **changes)

    def snapshot(self) -> dict[str, float]:
        """
        Flat representation for the run log: the lengthscale and B in row-major order.
        """
        rv = {"lambda": self.lengthscale}

        B = self.B
        for i in range(self.num_sources):
            for j in range(self.num_sources):
                rv[f"b{i + 1}{j + 1}"] = float(B[i, j])

        return rv


@dataclass(eq=False)
class PriorSpec:
    """
    Priors of the MAP objective: a gamma prior on the lengthscale, independent Gaussians on the entries of W and
    Gaussians on log(eta) (log-normal with median ``eta_center``). Noise variances are either fixed at ``noise`` or
    learned (flat prior on their logarithm within bounds).
    """

    num_sources: int
    lengthscale_mode: float
    lengthscale_shape: float = 2.0
    W_center: np.ndarray = None
    W_scale: float = 1.0
    eta_center: np.ndarray = None
    log_eta_scale: float = 0.5
    noise: np.ndarray = None
    learn_noise: np.ndarray = None
    rank: int = None
    # set when the B prior could not be estimated from data and a weakly-informative default is used instead
    fallback: bool = False
    output_scale: float = 1.0

    def __post_init__(self):
        if self.lengthscale_shape <= 1:
            raise ValueError("the gamma shape must exceed 1 for the prior to have a mode")

        if self.lengthscale_mode <= 0:
            raise ValueError("the lengthscale mode must be positive")

        self.rank = self.num_sources if self.rank is None else self.rank

        if self.noise is None:
            self.noise = np.zeros(self.num_sources)
        self.noise = np.broadcast_to(np.asarray(self.noise, dtype=float), (self.num_sources,)).copy()

        if self.learn_noise is None:
            self.learn_noise = np.zeros(self.num_sources, dtype=bool)
        self.learn_noise = np.broadcast_to(np.asarray(self.learn_noise, dtype=bool), (self.num_sources,)).copy()

        if self.W_center is None:
            default = Hyperparams.default(self.num_sources, self.lengthscale_mode, self.output_scale, rank=self.rank)
            self.W_center = default.W
            self.eta_center = default.eta
            self.W_scale = 2.0 * self.output_scale
            self.log_eta_scale = 2.0

        self.W_center = np.atleast_2d(np.asarray(self.W_center, dtype=float))
        self.eta_center = np.atleast_1d(np.asarray(self.eta_center, dtype=float))

    @classmethod
    def weakly_informative(
        cls,
        num_sources: int,
        width: float,
        output_scale: float = 1.0,
        mode_fraction: float = 0.05,
        shape: float = 2.0,
        noise=0.0,
        learn_noise=False,
    ) -> "PriorSpec":
        return cls(
            num_sources,
            lengthscale_mode=mode_fraction * width,
            lengthscale_shape=shape,
            noise=noise,
            learn_noise=learn_noise,
            output_scale=max(float(output_scale), 1e-3),
        )

    @property
    def lengthscale_scale(self) -> float:
        # the mode of gamma(k, theta) is (k - 1) theta
        return self.lengthscale_mode / (self.lengthscale_shape - 1.0)

    def log_density(self, hyper: Hyperparams) -> float:
        lp = gamma.logpdf(hyper.lengthscale, a=self.lengthscale_shape, scale=self.lengthscale_scale)
        lp += np.sum(norm.logpdf(hyper.W, loc=self.W_center, scale=self.W_scale))
        lp += np.sum(norm.logpdf(np.log(hyper.eta), loc=np.log(self.eta_center), scale=self.log_eta_scale))
        return float(lp)

    def center(self) -> Hyperparams:
        return Hyperparams(self.lengthscale_mode, self.W_center.copy(), self.eta_center.copy(), self.noise.copy())

    def with_b_prior(self, W_center, eta_center, W_scale: float, log_eta_scale: float, fallback: bool) -> "PriorSpec":
        return dataclasses.replace(
            self,
            W_center=np.array(W_center, dtype=float),
            eta_center=np.array(eta_center, dtype=float),
            W_scale=W_scale,
            log_eta_scale=log_eta_scale,
            fallback=fallback,
        )


def gram(data: Dataset, hyper: Hyperparams) -> np.ndarray:
    kernel = hyper.kernel()
    sources = data.sources
    X = data.X
    G = kernel(sources, X, sources, X)
    G[np.diag_indices_from(G)] += hyper.noise[sources - 1]
    return G


class GpState:
    """
    Factorized multi-source GP. Appending observations and replacing hyperparameters are write operations; all
    queries are read-only and may run concurrently between writes.
    """

    def __init__(self, hyper: Hyperparams, data: Dataset, prior_mean=None):
        self.hyper = hyper
        self.kernel = hyper.kernel()
        self.data = data

        if prior_mean is None:
            prior_mean = np.zeros(hyper.num_sources)
        self.prior_mean = np.broadcast_to(np.asarray(prior_mean, dtype=float), (hyper.num_sources,)).copy()

        self.chol: np.ndarray | None = None
        self.alpha: np.ndarray | None = None
        self.jitter = 0.0

        self.refactor()

    @property
    def num_sources(self) -> int:
        return self.hyper.num_sources

    @property
    def dim(self) -> int:
        return self.data.dim

    @property
    def factorized(self) -> bool:
        return self.chol is not None and self.chol.shape[0] == len(self.data)

    def residuals(self) -> np.ndarray:
        return self.data.y - self.prior_mean[self.data.sources - 1]

    def refactor(self):
        if len(self.data) == 0:
            self.chol = np.zeros((0, 0))
            self.alpha = np.zeros(0)
            self.jitter = 0.0
            return

        self.chol, self.jitter = cholesky_with_jitter(gram(self.data, self.hyper))
        self.alpha = cho_solve((self.chol, True), self.residuals())

    def append(self, l: int, x, y: float):
        """
        Append a triplet and extend the Cholesky factor by one row instead of refactorizing.
        """
        self.require_factorized()
        self.kernel.source_index(l)

        n = len(self.data)
        self.data.append(l, x, y)

        if n == 0:
            self.refactor()
            return

        new_x = self.data.X[-1:]
        k = self.kernel(self.data.sources[:-1], self.data.X[:-1], l, new_x)[:, 0]
        c = solve_triangular(self.chol, k, lower=True)
        d2 = self.kernel.B[l - 1, l - 1] + self.hyper.noise[l - 1] + self.jitter - c @ c

        if not np.isfinite(d2) or d2 <= 0:
            logger.debug("rank-1 update lost positive definiteness, refactorizing")
            self.refactor()
            return

        chol = np.zeros((n + 1, n + 1))
        chol[:n, :n] = self.chol
        chol[n, :n] = c
        chol[n, n] = np.sqrt(d2)

        self.chol = chol
        self.alpha = cho_solve((self.chol, True), self.residuals())

    def with_hyper(self, hyper: Hyperparams) -> "GpState":
        return GpState(hyper, self.data.copy(), self.prior_mean)

    def copy(self) -> "GpState":
        rv = object.__new__(GpState)
        rv.hyper = self.hyper
        rv.kernel = self.kernel
        rv.data = self.data.copy()
        rv.prior_mean = self.prior_mean.copy()
        rv.chol = None if self.chol is None else self.chol.copy()
        rv.alpha = None if self.alpha is None else self.alpha.copy()
        rv.jitter = self.jitter
        return rv

    def conditioned(self, sources, X, y=None) -> "GpState":
        """
        Copy of this state with additional observations. Posterior covariances do not depend on y, which defaults to
        the prior mean.
        """
        X = as_points(X, self.dim)
        sources = np.broadcast_to(sources, (X.shape[0],))

        if y is None:
            y = self.prior_mean[np.asarray(sources, dtype=int) - 1]
        y = np.broadcast_to(y, (X.shape[0],))

        rv = self.copy()
        for l, x, value in zip(sources, X, y):
            rv.append(int(l), x, value)

        return rv

    def require_factorized(self):
        if not self.factorized:
            raise UnfactorizedStateError("GP state has not been factorized")

    def cross_kernel(self, sources, X) -> np.ndarray:
        """
        K(data, (sources, X)), shape (N, m).
        """
        return self.kernel(self.data.sources, self.data.X, sources, X)

    def whiten(self, matrix: np.ndarray) -> np.ndarray:
        """
        L^-1 matrix for the lower Cholesky factor L of the Gram matrix.
        """
        self.require_factorized()

        if matrix.shape[0] == 0:
            return matrix

        return solve_triangular(self.chol, matrix, lower=True)


def predict(state: GpState, sources, X) -> tuple[np.ndarray, np.ndarray]:
    """
    Vectorized posterior means and variances at many (source, location) pairs.
    """
    state.require_factorized()

    X = as_points(X, state.dim)
    sources = np.broadcast_to(sources, (X.shape[0],))
    index = state.kernel.source_index(sources)

    prior_var = state.kernel.B[index, index]
    mean = state.prior_mean[index].copy()

    if len(state.data) == 0:
        return mean, prior_var.copy()

    k = state.cross_kernel(sources, X)
    mean += k.T @ state.alpha

    v = state.whiten(k)
    var = prior_var - np.sum(v**2, axis=0)

    return mean, np.maximum(var, 0.0)


def posterior(state: GpState, l: int, x) -> tuple[float, float]:
    mean, var = predict(state, l, as_points(x, state.dim)[:1])
    return float(mean[0]), float(var[0])


def posterior_cross_cov(state: GpState, sources1, X1, sources2, X2) -> np.ndarray:
    state.require_factorized()

    X1 = as_points(X1, state.dim)
    X2 = as_points(X2, state.dim)
    sources1 = np.broadcast_to(sources1, (X1.shape[0],))
    sources2 = np.broadcast_to(sources2, (X2.shape[0],))

    prior = state.kernel(sources1, X1, sources2, X2)

    if len(state.data) == 0:
        return prior

    v1 = state.whiten(state.cross_kernel(sources1, X1))
    v2 = state.whiten(state.cross_kernel(sources2, X2))
    return prior - v1.T @ v2


def log_marginal_likelihood(data: Dataset, hyper: Hyperparams) -> float:
    try:
        chol, _ = cholesky_with_jitter(gram(data, hyper))
    except IllConditionedModelError:
        return -np.inf

    y = data.y
    alpha = cho_solve((chol, True), y)
    return float(-0.5 * y @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * len(y) * np.log(2.0 * np.pi))


def log_map_objective(data: Dataset, hyper: Hyperparams, priors: PriorSpec) -> float:
    if len(data) == 0:
        raise ValueError("the MAP objective needs at least one observation")

    lml = log_marginal_likelihood(data, hyper)

    if not np.isfinite(lml):
        return -np.inf

    return lml + priors.log_density(hyper)


def output_scale(data: Dataset) -> float:
    if len(data) == 0:
        return 1.0

    return max(float(np.sqrt(np.mean(data.y**2))), 1e-3)


class _Packing:
    """
    Maps hyperparameters to an unconstrained-ish optimizer vector: log lengthscale, W, log eta, log learned noise.
    """

    def __init__(self, template: Hyperparams, learn_lengthscale: bool, learn_noise: np.ndarray):
        self.template = template
        self.learn_lengthscale = learn_lengthscale
        self.learn_noise = np.asarray(learn_noise, dtype=bool)

    def pack(self, hyper: Hyperparams) -> np.ndarray:
        parts = []

        if self.learn_lengthscale:
            parts.append([np.log(hyper.lengthscale)])

        parts.append(hyper.W.ravel())
        parts.append(np.log(hyper.eta))
        parts.append(np.log(np.maximum(hyper.noise[self.learn_noise], 1e-300)))

        return np.concatenate(parts)

    def unpack(self, theta: np.ndarray) -> Hyperparams:
        template = self.template
        offset = 0

        lengthscale = template.lengthscale
        if self.learn_lengthscale:
            lengthscale = float(np.exp(theta[0]))
            offset = 1

        size = template.W.size
        W = theta[offset : offset + size].reshape(template.W.shape)
        offset += size

        L = template.num_sources
        eta = np.exp(theta[offset : offset + L])
        offset += L

        noise = template.noise.copy()
        noise[self.learn_noise] = np.exp(theta[offset:])

        return Hyperparams(lengthscale, W, eta, noise)

    def bounds(self, priors: PriorSpec, scale: float) -> list[tuple[float, float]]:
        rv = []

        if self.learn_lengthscale:
            rv.append((np.log(1e-2 * priors.lengthscale_mode), np.log(1e3 * priors.lengthscale_mode)))

        rv += [(-20.0 * scale, 20.0 * scale)] * self.template.W.size
        rv += [(np.log(1e-10 * scale**2), np.log(1e2 * scale**2))] * self.template.num_sources
        rv += [(np.log(1e-10 * scale**2), np.log(scale**2))] * int(np.sum(self.learn_noise))

        return rv

    def perturbation_scales(self, scale: float) -> np.ndarray:
        parts = []

        if self.learn_lengthscale:
            parts.append([0.5])

        parts.append(np.full(self.template.W.size, 0.5 * scale))
        parts.append(np.ones(self.template.num_sources))
        parts.append(np.ones(int(np.sum(self.learn_noise))))

        return np.concatenate(parts)


def _maximize(
    data: Dataset,
    priors: PriorSpec,
    packing: _Packing,
    start: Hyperparams,
    restarts: int,
    rng: np.random.Generator,
) -> Hyperparams | None:
    scale = max(output_scale(data), priors.output_scale)
    bounds = packing.bounds(priors, scale)
    lower = np.array([b[0] for b in bounds])
    upper = np.array([b[1] for b in bounds])

    def negative_objective(theta):
        try:
            hyper = packing.unpack(theta)
        except ValueError:
            return INVALID_OBJECTIVE

        value = log_map_objective(data, hyper, priors)

        if not np.isfinite(value):
            return INVALID_OBJECTIVE

        return -value

    theta0 = np.clip(packing.pack(start), lower, upper)
    starts = [theta0]

    perturbation = packing.perturbation_scales(scale)
    for _ in range(max(restarts, 1) - 1):
        starts.append(np.clip(theta0 + perturbation * rng.standard_normal(theta0.shape), lower, upper))

    best = None
    best_value = INVALID_OBJECTIVE

    for i, theta in enumerate(starts):
        result = scipy.optimize.minimize(negative_objective, theta, method="L-BFGS-B", bounds=bounds)

        logger.debug(f"fit restart {i}: objective {-result.fun:.6g}, {result.message}")

        if result.fun < best_value:
            best_value = result.fun
            best = result.x

    if best is None:
        return None

    return packing.unpack(best)


def fit(
    data: Dataset,
    priors: PriorSpec,
    restarts: int = 5,
    seed: int | np.random.SeedSequence = 0,
    initial: Hyperparams = None,
) -> Hyperparams:
    """
    MAP estimate of all hyperparameters by multi-start bounded quasi-Newton optimization.

    The first start is ``initial`` (or the prior center), the others are seeded random perturbations of it. If every
    restart fails, the starting hyperparameters are returned with ``converged`` set to False.
    """
    if len(data) == 0:
        raise ValueError("cannot fit hyperparameters without data")

    start = initial if initial is not None else priors.center()
    # noise variances that are not learned always follow the priors
    start = start.replace(noise=np.where(priors.learn_noise, start.noise, priors.noise))

    packing = _Packing(start, learn_lengthscale=True, learn_noise=priors.learn_noise)
    result = _maximize(data, priors, packing, start, restarts, make_rng(seed, "fit"))

    if result is None:
        logger.warning(f"all {restarts} hyperparameter fit restarts failed, keeping previous hyperparameters")
        return start.replace(converged=False)

    return result


def empirical_bayes_B_prior(
    initial: Dataset,
    priors: PriorSpec,
    restarts: int = 5,
    seed: int | np.random.SeedSequence = 0,
    scale: float = 0.5,
) -> PriorSpec:
    """
    Center the prior on W and eta at the maximizer of the marginal likelihood of the initial data (lengthscale fixed
    at its prior mode, weakly-informative prior on B as regularizer).

    Falls back to the weakly-informative prior, flagged, if some source has no initial observation.
    """
    weak = PriorSpec(
        priors.num_sources,
        lengthscale_mode=priors.lengthscale_mode,
        lengthscale_shape=priors.lengthscale_shape,
        noise=priors.noise,
        learn_noise=priors.learn_noise,
        rank=priors.rank,
        output_scale=output_scale(initial),
    )

    missing = [l for l in range(1, priors.num_sources + 1) if initial.count(l) == 0]

    if missing:
        logger.warning(f"no initial data for source(s) {missing}, using a weakly-informative prior on B")
        return priors.with_b_prior(weak.W_center, weak.eta_center, weak.W_scale, weak.log_eta_scale, fallback=True)

    start = weak.center()
    packing = _Packing(start, learn_lengthscale=False, learn_noise=np.zeros(priors.num_sources, dtype=bool))
    result = _maximize(initial, weak, packing, start, restarts, make_rng(seed, "empirical-bayes"))

    if result is None:
        logger.warning("empirical Bayes fit of B failed, using a weakly-informative prior on B")
        return priors.with_b_prior(weak.W_center, weak.eta_center, weak.W_scale, weak.log_eta_scale, fallback=True)

    fitted_scale = float(np.sqrt(np.mean(np.diag(result.B))))
    logger.debug(f"empirical Bayes B center:\n{result.B}")

    return dataclasses.replace(
        priors.with_b_prior(result.W, result.eta, scale * fitted_scale, scale, fallback=False),
        output_scale=fitted_scale,
    )
