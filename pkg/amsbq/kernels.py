"""
Squared-exponential base kernel, intrinsic coregionalization (ICM) multi-source kernel and their closed-form
integrals against a uniform probability measure on a box.

The error function is evaluated with :func:`scipy.special.erf` (Cephes rational approximations, absolute error well
below 1e-15 on the real line), which satisfies the accuracy needed for the closed forms.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import erf

from .logging import get_logger

logger = get_logger("kernels")

SQRT2 = np.sqrt(2.0)


class UnsupportedMeasureError(ValueError):
    pass


def as_points(x, dim: int = None) -> np.ndarray:
    """
    Convert a single point or a collection of points into a 2-D array of shape (n, D).
    """
    points = np.asarray(x, dtype=float)

    if points.ndim == 0:
        points = points.reshape(1, 1)
    elif points.ndim == 1:
        # a 1-D array is a single point unless the dimension says otherwise
        if dim == 1:
            points = points.reshape(-1, 1)
        else:
            points = points.reshape(1, -1)
    elif points.ndim != 2:
        raise ValueError(f"points must be at most 2-dimensional, got shape {points.shape}")

    if dim is not None and points.shape[1] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {points.shape[1]}")

    return points


def _check_lengthscale(lengthscale: float):
    if not np.isfinite(lengthscale) or lengthscale <= 0:
        raise ValueError(f"lengthscale must be positive, got {lengthscale}")


@dataclass(frozen=True)
class RbfKernel:
    """
    kappa(x, x') = output_scale * exp(-|x - x'|^2 / (2 lengthscale^2))

    In ICM usage the output scale is folded into the coregionalization matrix and stays 1.
    """

    lengthscale: float
    output_scale: float = 1.0

    def __post_init__(self):
        _check_lengthscale(self.lengthscale)

        if self.output_scale <= 0:
            raise ValueError(f"output scale must be positive, got {self.output_scale}")

    def __call__(self, x1, x2) -> np.ndarray:
        x1 = as_points(x1)
        x2 = as_points(x2, x1.shape[1])

        sq_dist = np.sum((x1[:, None, :] - x2[None, :, :]) ** 2, axis=-1)
        return self.output_scale * np.exp(-0.5 * sq_dist / self.lengthscale**2)


def rbf_eval(x, x2, lengthscale: float) -> float:
    _check_lengthscale(lengthscale)

    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))

    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs. {x2.shape}")

    return float(np.exp(-0.5 * np.sum((x - x2) ** 2) / lengthscale**2))


@dataclass(frozen=True, eq=False)
class IcmKernel:
    """
    k_{ll'}(x, x') = B_{ll'} kappa(x, x') with B = W W^T + diag(eta).

    Source indices are 1-based throughout the public API.
    """

    base: RbfKernel
    W: np.ndarray
    eta: np.ndarray
    B: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        eta = np.atleast_1d(np.asarray(self.eta, dtype=float))

        if W.shape[0] != eta.shape[0]:
            raise ValueError(f"W has {W.shape[0]} rows but eta has {eta.shape[0]} entries")

        if np.any(eta <= 0):
            raise ValueError("all entries of eta must be positive")

        B = W @ W.T + np.diag(eta)
        # exact symmetry, the product is symmetric only up to round-off
        B = 0.5 * (B + B.T)

        object.__setattr__(self, "W", W)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "B", B)

    @classmethod
    def from_lengthscale(cls, lengthscale: float, W, eta) -> "IcmKernel":
        return cls(RbfKernel(lengthscale), W, eta)

    @property
    def num_sources(self) -> int:
        return self.B.shape[0]

    @property
    def lengthscale(self) -> float:
        return self.base.lengthscale

    def source_index(self, sources) -> np.ndarray:
        """
        Validate 1-based source indices and convert them to 0-based array indices.
        """
        sources = np.asarray(sources)

        if sources.size and (np.any(sources < 1) or np.any(sources > self.num_sources)):
            raise ValueError(f"source index out of range 1..{self.num_sources}: {sources}")

        return sources.astype(int) - 1

    def coregionalization(self, sources1, sources2) -> np.ndarray:
        i1 = self.source_index(np.atleast_1d(sources1))
        i2 = self.source_index(np.atleast_1d(sources2))
        return self.B[np.ix_(i1, i2)]

    def __call__(self, sources1, x1, sources2, x2) -> np.ndarray:
        """
        Gram matrix between the (source, location) pairs (sources1, x1) and (sources2, x2). Scalar sources are
        broadcast over all locations.
        """
        x1 = as_points(x1)
        x2 = as_points(x2, x1.shape[1])

        sources1 = np.broadcast_to(sources1, (x1.shape[0],))
        sources2 = np.broadcast_to(sources2, (x2.shape[0],))

        return self.coregionalization(sources1, sources2) * self.base(x1, x2)


def icm_eval(l: int, l2: int, x, x2, kernel: IcmKernel) -> float:
    return float(kernel(l, np.atleast_1d(x)[None, :], l2, np.atleast_1d(x2)[None, :])[0, 0])


@dataclass(frozen=True, eq=False)
class IntegrationMeasure:
    """
    Uniform probability measure on the box given by ``bounds`` (one (low, high) pair per dimension).

    An optional density ``weight`` (with respect to the Lebesgue measure) can be attached. It is never used in the
    kernel integrals; instead it is folded into the integrand via :meth:`fold_weight` so that the measure itself stays
    uniform.
    """

    bounds: np.ndarray
    kind: str = "uniform-box"
    weight: Callable[[np.ndarray], float] | None = field(default=None, compare=False)

    def __post_init__(self):
        bounds = np.atleast_2d(np.asarray(self.bounds, dtype=float))

        if bounds.shape[1] != 2:
            raise ValueError(f"bounds must be (low, high) pairs, got shape {bounds.shape}")

        if not np.all(np.isfinite(bounds)):
            raise ValueError("bounds must be finite")

        if np.any(bounds[:, 0] >= bounds[:, 1]):
            raise ValueError("every lower bound must be smaller than the corresponding upper bound")

        object.__setattr__(self, "bounds", bounds)

    @classmethod
    def box(cls, *bounds: tuple[float, float], weight=None) -> "IntegrationMeasure":
        return cls(np.array(bounds, dtype=float), weight=weight)

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    @property
    def lower(self) -> np.ndarray:
        return self.bounds[:, 0]

    @property
    def upper(self) -> np.ndarray:
        return self.bounds[:, 1]

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def contains(self, x, tolerance: float = 1e-12) -> bool:
        points = as_points(x, self.dim)
        return bool(np.all(points >= self.lower - tolerance) and np.all(points <= self.upper + tolerance))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lower + self.widths * rng.random((n, self.dim))

    def fold_weight(self, f: Callable[[np.ndarray], float]) -> Callable[[np.ndarray], float]:
        """
        Turn f into the integrand f(x) w(x) |Omega| whose expectation under the uniform measure equals the integral of
        f against the weight density.
        """
        if self.weight is None:
            return f

        weight = self.weight
        volume = self.volume

        def folded(x):
            return f(x) * weight(x) * volume

        return folded

    def unweighted(self) -> "IntegrationMeasure":
        return IntegrationMeasure(self.bounds, self.kind)


def _check_measure(measure: IntegrationMeasure):
    if measure.kind != "uniform-box":
        raise UnsupportedMeasureError(f"unsupported measure kind {measure.kind}")

    if measure.weight is not None:
        raise UnsupportedMeasureError("weighted measures need to be folded into the integrand first")


def rbf_mean(x, lengthscale: float, measure: IntegrationMeasure) -> np.ndarray:
    """
    Integral of the unit RBF kernel against the uniform measure, one value per row of x.
    """
    _check_measure(measure)
    points = as_points(x, measure.dim)

    scale = SQRT2 * lengthscale
    lower = (measure.lower - points) / scale
    upper = (measure.upper - points) / scale

    per_dim = np.sqrt(np.pi / 2.0) * lengthscale * (erf(upper) - erf(lower)) / measure.widths
    return np.prod(per_dim, axis=1)


def rbf_double_mean(lengthscale: float, measure: IntegrationMeasure) -> float:
    _check_measure(measure)

    widths = measure.widths
    scaled = widths / (SQRT2 * lengthscale)

    per_dim = 2.0 * lengthscale**2 * (np.expm1(-(scaled**2)) + np.sqrt(np.pi) * scaled * erf(scaled)) / widths**2
    return float(np.prod(per_dim))


def kernel_mean_vector(l: int, sources, x, kernel: IcmKernel, measure: IntegrationMeasure) -> np.ndarray:
    """
    <k_{l, sources}(., x)> for many (source, location) pairs at once.
    """
    points = as_points(x, measure.dim)
    sources = np.broadcast_to(sources, (points.shape[0],))
    coregionalization = kernel.coregionalization(l, sources)[0]
    return coregionalization * rbf_mean(points, kernel.lengthscale, measure)


def kernel_mean(l: int, l2: int, x2, kernel: IcmKernel, measure: IntegrationMeasure) -> float:
    point = np.atleast_1d(np.asarray(x2, dtype=float))
    return float(kernel_mean_vector(l, l2, point[None, :], kernel, measure)[0])


def initial_error(kernel: IcmKernel, measure: IntegrationMeasure) -> float:
    return float(kernel.B[0, 0]) * rbf_double_mean(kernel.lengthscale, measure)
