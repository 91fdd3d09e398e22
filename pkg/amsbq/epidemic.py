"""
Compartmental epidemic models used as a two-source benchmark: the primary source averages a quantity of interest over
stochastic SEIR simulations (Gillespie algorithm), the secondary source reads the same quantity off the deterministic
SIR ODE solution, which deliberately lacks the exposed compartment.

Time is measured in units of the recovery time, i.e. b = 1 and the infection rate a equals the ratio a/b. The prior
on a/b (gamma with shape 5 and scale 4, shifted to start at 1) is folded into both sources on the truncated domain
[1, 61].
"""

import functools
from dataclasses import dataclass

import numpy as np
import scipy.integrate
from scipy.stats import gamma as gamma_distribution

from .abstractbenchmark import AbstractBenchmark, gauss_legendre_grid
from .acquisition import CostModel
from .kernels import IntegrationMeasure
from .logging import get_logger
from .util import make_rng, make_seed_sequence

logger = get_logger("epidemic")

QOIS = ("max-infected", "time-of-max")

# compartment columns of a trajectory
S, E, I, R = range(4)

RATIO_BOUNDS = (1.0, 61.0)
RATIO_PRIOR_SHAPE = 5.0
RATIO_PRIOR_SCALE = 4.0

PRIMARY_COST = 1.0
SECONDARY_COST = 5e-4

# upper limit of repetitions when a batch of simulations contains no outbreak
MAX_REPS_FACTOR = 16


@dataclass(frozen=True)
class SirParams:
    a: float
    b: float = 1.0
    N: int = 100
    # rate of leaving the exposed compartment, 10 b unless given
    gamma: float = None
    initial_infected: int = 1

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError("infection and recovery rates must be non-negative")

        if self.gamma is None:
            object.__setattr__(self, "gamma", 10.0 * self.b)

        if self.gamma < 0:
            raise ValueError("the incubation exit rate must be non-negative")

        if not 0 < self.initial_infected <= self.N:
            raise ValueError(f"initial number of infected individuals must lie in 1..{self.N}")

    @classmethod
    def from_ratio(cls, a_over_b: float, b: float = 1.0, N: int = 100) -> "SirParams":
        return cls(a=a_over_b * b, b=b, N=N)

    @property
    def initial_state(self) -> np.ndarray:
        return np.array([self.N - self.initial_infected, 0, self.initial_infected, 0], dtype=float)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Compartment sizes (S, E, I, R) over time. Stochastic trajectories are piecewise constant between events, ODE
    trajectories are sampled on a time grid and interpolated linearly.
    """

    times: np.ndarray
    states: np.ndarray
    piecewise_constant: bool = True

    def sample(self, t_grid) -> np.ndarray:
        t_grid = np.asarray(t_grid, dtype=float)

        if self.piecewise_constant:
            index = np.searchsorted(self.times, t_grid, side="right") - 1
            return self.states[np.clip(index, 0, len(self.times) - 1)]

        return np.stack([np.interp(t_grid, self.times, self.states[:, c]) for c in range(4)], axis=1)

    @property
    def max_infected(self) -> float:
        return float(np.max(self.states[:, I]))

    @property
    def time_of_max(self) -> float:
        # first time the maximum is attained
        return float(self.times[int(np.argmax(self.states[:, I]))])

    @property
    def is_outbreak(self) -> bool:
        return bool(self.states[-1, S] < self.states[0, S])

    @property
    def num_events(self) -> int:
        return len(self.times) - 1

    def qoi(self, name: str) -> float:
        if name == "max-infected":
            return self.max_infected
        if name == "time-of-max":
            return self.time_of_max

        raise ValueError(f"unknown quantity of interest {name}")


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed

    return make_rng(seed)


def _gillespie(params: SirParams, rng: np.random.Generator, transitions: np.ndarray, rates) -> Trajectory:
    state = params.initial_state
    # every individual changes its compartment at most once per transition kind
    max_events = len(transitions) * params.N

    # one uniform for the waiting time and one for the event kind per step
    uniforms = rng.random((max_events, 2))

    t = 0.0
    times = [t]
    states = [state.copy()]

    for k in range(max_events):
        if state[E] + state[I] == 0:
            break

        propensities = rates(state)
        total = propensities.sum()

        if total <= 0:
            break

        t += -np.log1p(-uniforms[k, 0]) / total
        event = int(np.searchsorted(np.cumsum(propensities), uniforms[k, 1] * total, side="right"))
        event = min(event, len(propensities) - 1)

        state = state + transitions[event]
        times.append(t)
        states.append(state.copy())

    return Trajectory(np.array(times), np.array(states))


SEIR_TRANSITIONS = np.array(
    [
        [-1, 1, 0, 0],
        [0, -1, 1, 0],
        [0, 0, -1, 1],
    ],
    dtype=float,
)

SIR_TRANSITIONS = np.array(
    [
        [-1, 0, 1, 0],
        [0, 0, -1, 1],
    ],
    dtype=float,
)


def gillespie_seir(params: SirParams, seed) -> Trajectory:
    """
    Exact stochastic simulation of the SEIR model with events S -> E (rate a S I / N), E -> I (rate gamma E) and
    I -> R (rate b I), until nobody is exposed or infected anymore.
    """

    def rates(state):
        return np.array([params.a * state[S] * state[I] / params.N, params.gamma * state[E], params.b * state[I]])

    return _gillespie(params, _as_rng(seed), SEIR_TRANSITIONS, rates)


def gillespie_sir(params: SirParams, seed) -> Trajectory:
    def rates(state):
        return np.array([params.a * state[S] * state[I] / params.N, params.b * state[I]])

    return _gillespie(params, _as_rng(seed), SIR_TRANSITIONS, rates)


def _sir_rhs(params: SirParams):
    def rhs(t, y):
        infection = params.a * y[S] * y[I] / params.N
        return [-infection, 0.0, infection - params.b * y[I], params.b * y[I]]

    return rhs


def _seir_rhs(params: SirParams):
    def rhs(t, y):
        infection = params.a * y[S] * y[I] / params.N
        return [-infection, infection - params.gamma * y[E], params.gamma * y[E] - params.b * y[I], params.b * y[I]]

    return rhs


def _solve(rhs, params: SirParams, t_grid, **kwargs):
    t_grid = np.asarray(t_grid, dtype=float)

    result = scipy.integrate.solve_ivp(
        rhs,
        (float(t_grid[0]), float(t_grid[-1])),
        params.initial_state,
        method="RK45",
        t_eval=t_grid,
        rtol=1e-10,
        atol=1e-10,
        **kwargs,
    )

    if not result.success:
        raise ArithmeticError(f"ODE integration failed: {result.message}")

    return result


def ode_sir(params: SirParams, t_grid) -> Trajectory:
    """
    Adaptive Runge-Kutta solution of the SIR ODEs on t_grid. The exposed column stays zero.
    """
    result = _solve(_sir_rhs(params), params, t_grid)
    return Trajectory(result.t, result.y.T, piecewise_constant=False)


def ode_seir(params: SirParams, t_grid) -> Trajectory:
    result = _solve(_seir_rhs(params), params, t_grid)
    return Trajectory(result.t, result.y.T, piecewise_constant=False)


def sir_peak(params: SirParams) -> tuple[float, float]:
    """
    (max_t N_I(t), argmax_t N_I(t)) of the SIR ODE solution. The peak is located as the event where dN_I/dt changes
    its sign from positive to negative; without such an event N_I is largest at t = 0.
    """
    initial = params.initial_state

    def peak(t, y):
        return params.a * y[S] / params.N - params.b

    peak.terminal = True
    peak.direction = -1

    if peak(0.0, initial) <= 0:
        return float(initial[I]), 0.0

    t_end = 1000.0 / params.b
    result = _solve(_sir_rhs(params), params, [0.0, t_end], events=peak)

    if len(result.t_events[0]) == 0:
        raise ArithmeticError(f"no epidemic peak before t = {t_end}")

    return float(result.y_events[0][0][I]), float(result.t_events[0][0])


def ratio_prior_density(a_over_b) -> np.ndarray:
    return gamma_distribution.pdf(np.asarray(a_over_b, dtype=float) - 1.0, a=RATIO_PRIOR_SHAPE, scale=RATIO_PRIOR_SCALE)


def _location_key(a_over_b: float) -> int:
    # the bit pattern of the location identifies the simulation stream of a query
    return int(np.float64(a_over_b).view(np.uint64))


def stochastic_qoi(a_over_b: float, qoi: str, reps: int, seed, max_reps: int = None) -> float:
    """
    Average of the quantity of interest over the outbreaks among ``reps`` stochastic SEIR simulations.

    If no simulation leads to an outbreak, the number of repetitions is doubled until ``max_reps``. Should there still
    be no outbreak, the average over all simulations is returned.
    """
    if reps < 1:
        raise ValueError("at least one repetition is needed")

    if qoi not in QOIS:
        raise ValueError(f"unknown quantity of interest {qoi}")

    max_reps = reps * MAX_REPS_FACTOR if max_reps is None else max_reps
    params = SirParams.from_ratio(a_over_b)
    stream = make_seed_sequence(seed, "gillespie", _location_key(a_over_b))

    trajectories = []
    target = reps

    while True:
        for rep in range(len(trajectories), target):
            trajectories.append(gillespie_seir(params, make_rng(stream, rep)))

        outbreaks = [t.qoi(qoi) for t in trajectories if t.is_outbreak]

        if outbreaks:
            return float(np.mean(outbreaks))

        if target >= max_reps:
            logger.warning(f"no outbreak among {target} simulations at a/b = {a_over_b:.6g}, averaging all of them")
            return float(np.mean([t.qoi(qoi) for t in trajectories]))

        logger.warning(f"no outbreak among {target} simulations at a/b = {a_over_b:.6g}, resampling")
        target = min(2 * target, max_reps)


def sir_integrand(l: int, a_over_b: float, qoi: str, reps: int = 100, seed=0) -> float:
    """
    Source l of the epidemic benchmark at a/b, including the folded prior weight.
    """
    low, high = RATIO_BOUNDS

    if not low <= a_over_b <= high:
        raise ValueError(f"a/b = {a_over_b} lies outside of [{low}, {high}]")

    if l == 1:
        value = stochastic_qoi(a_over_b, qoi, reps, seed)
    elif l == 2:
        max_infected, time_of_max = sir_peak(SirParams.from_ratio(a_over_b))
        value = max_infected if qoi == "max-infected" else time_of_max
    else:
        raise ValueError(f"the epidemic benchmark has no source {l}")

    return float(value * ratio_prior_density(a_over_b) * (high - low))


@functools.lru_cache(maxsize=None)
def _primary_ground_truth(qoi: str, reps: int, nodes: int, seed: int) -> float:
    measure = IntegrationMeasure.box(RATIO_BOUNDS)
    points, weights = gauss_legendre_grid(measure, nodes)
    values = np.array([sir_integrand(1, float(x[0]), qoi, reps, seed) for x in points])
    return float(weights @ values)


class SirBenchmark(AbstractBenchmark):
    """
    E[max_t N_I(t)] or E[argmax_t N_I(t)] under the prior on a/b, restricted to outbreaks.

    The ground truth is a Gauss-Legendre rule over the primary source with many repetitions per node and a dedicated
    simulation seed, so it does not depend on the run seed.
    """

    qoi: str = None

    ground_truth_nodes = 32
    ground_truth_reps = 400
    ground_truth_seed = 2**31 - 1

    @staticmethod
    def benchmark_id() -> str:
        raise NotImplementedError

    def __init__(self, reps: int = 100, seed: int = 0):
        super().__init__()

        if reps < 1:
            raise ValueError("at least one repetition per primary query is needed")

        self.reps = reps
        self.seed = seed

        self._measure = IntegrationMeasure.box(RATIO_BOUNDS)
        self._cost_model = CostModel.constant([PRIMARY_COST, SECONDARY_COST])

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
        return sir_integrand(l, float(x[0]), self.qoi, self.reps, self.seed)

    def _compute_ground_truth(self) -> float:
        return _primary_ground_truth(self.qoi, self.ground_truth_reps, self.ground_truth_nodes, self.ground_truth_seed)

    def initial_locations(self, rng: np.random.Generator) -> dict[str, list[tuple[int, np.ndarray]]]:
        points = self.measure.sample(rng, 2)

        return {
            "amsbq": [(1, points[0]), (2, points[0]), (2, points[1])],
            "vbq": [(1, points[0])],
        }


class SirMaxInfected(SirBenchmark):
    qoi = "max-infected"

    @staticmethod
    def benchmark_id() -> str:
        return "sir-max"


class SirTimeOfMax(SirBenchmark):
    qoi = "time-of-max"

    @staticmethod
    def benchmark_id() -> str:
        return "sir-argmax"
