from .abstractbenchmark import AbstractBenchmark
from .epidemic import SirBenchmark, SirMaxInfected, SirTimeOfMax
from .forrester import ClassicForrester, WigglyForrester
from .gaussmixture import GaussMixtureBenchmark

BENCHMARKS = {
    cls.benchmark_id(): cls
    for cls in (ClassicForrester, WigglyForrester, SirMaxInfected, SirTimeOfMax, GaussMixtureBenchmark)
}


def benchmark_ids() -> list[str]:
    return list(BENCHMARKS)


def make_benchmark(benchmark_id: str, seed: int = 0, reps: int = 100) -> AbstractBenchmark:
    try:
        cls = BENCHMARKS[benchmark_id]
    except KeyError:
        raise KeyError(f"unknown benchmark {benchmark_id}, available: {', '.join(BENCHMARKS)}")

    # only the epidemic benchmarks draw random numbers while evaluating their sources
    if issubclass(cls, SirBenchmark):
        return cls(reps=reps, seed=seed)

    return cls()
